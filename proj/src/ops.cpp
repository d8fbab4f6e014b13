#include "xfuse/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace xfuse {

namespace {

thread_local double g_relu_kink_min = std::numeric_limits<double>::infinity();

using i64 = int64_t;

// C(m x n) += A(m x k) * B(k x n)
template <typename T>
void gemm_nn_acc(T* c, const T* a, const T* b, i64 m, i64 n, i64 k) {
    for (i64 i = 0; i < m; ++i) {
        T* crow = c + i * n;
        const T* arow = a + i * k;
        for (i64 t = 0; t < k; ++t) {
            T av = arow[t];
            if (av == T(0)) continue;
            const T* brow = b + t * n;
            for (i64 j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C(m x k) += G(m x n) * B(k x n)^T
template <typename T>
void gemm_nt_acc(T* c, const T* g, const T* b, i64 m, i64 n, i64 k) {
    for (i64 i = 0; i < m; ++i) {
        const T* grow = g + i * n;
        T* crow = c + i * k;
        for (i64 t = 0; t < k; ++t) {
            const T* brow = b + t * n;
            T acc = T(0);
            for (i64 j = 0; j < n; ++j) acc += grow[j] * brow[j];
            crow[t] += acc;
        }
    }
}

// C(k x n) += A(m x k)^T * G(m x n)
template <typename T>
void gemm_tn_acc(T* c, const T* a, const T* g, i64 m, i64 n, i64 k) {
    for (i64 i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        const T* grow = g + i * n;
        for (i64 t = 0; t < k; ++t) {
            T av = arow[t];
            if (av == T(0)) continue;
            T* crow = c + t * n;
            for (i64 j = 0; j < n; ++j) crow[j] += av * grow[j];
        }
    }
}

template <typename T>
bool tracks_grad(const TensorT<T>& t) {
    return t.requires_grad() || t.impl()->node != nullptr;
}

template <typename T, typename F>
TensorT<T> attach(TensorT<T> out, std::vector<TensorT<T>> inputs, F&& bwd) {
    if (!grad_enabled()) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || tracks_grad(in);
    if (!any) return out;
    auto node = std::make_shared<NodeT<T>>();
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.impl());
    node->backward = std::forward<F>(bwd);
    out.impl()->node = std::move(node);
    return out;
}

template <typename T>
void require_matrix(const TensorT<T>& t, const char* what) {
    if (t.shape().size() > 2)
        throw DimensionError(std::string(what) + " must be rank 1 or 2, got " + shape_str(t.shape()));
}

template <typename T>
void check_rows_stochastic(const TensorT<T>& t, const char* what) {
    i64 n = t.rows(), c = t.cols();
    const T* d = t.data().data();
    for (i64 i = 0; i < n; ++i) {
        T s = T(0);
        for (i64 j = 0; j < c; ++j) s += d[i * c + j];
        if (std::abs(double(s) - 1.0) > 1e-6)
            throw ValidationError(std::string(what) + ": row " + std::to_string(i) +
                                  " is not a probability distribution (sum " + std::to_string(double(s)) + ")");
    }
}

} // namespace

void reset_relu_kink_distance() { g_relu_kink_min = std::numeric_limits<double>::infinity(); }
double relu_kink_distance() { return g_relu_kink_min; }

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    require_matrix(a, "matmul lhs");
    require_matrix(b, "matmul rhs");
    i64 m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
    if (k != k2)
        throw DimensionError("matmul: inner extents disagree, lhs " + shape_str(a.shape()) +
                             " vs rhs " + shape_str(b.shape()));
    std::vector<T> out(static_cast<size_t>(m * n), T(0));
    gemm_nn_acc(out.data(), a.data().data(), b.data().data(), m, n, k);
    auto result = TensorT<T>::from_data({m, n}, std::move(out));
    bool na = tracks_grad(a), nb = tracks_grad(b);
    return attach(std::move(result), {a, b}, [a, b, na, nb, m, n, k](TensorImplT<T>& o) {
        if (na) {
            a.impl()->ensure_grad();
            gemm_nt_acc(a.impl()->grad.data(), o.grad.data(), b.data().data(), m, n, k);
        }
        if (nb) {
            b.impl()->ensure_grad();
            gemm_tn_acc(b.impl()->grad.data(), a.data().data(), o.grad.data(), m, n, k);
        }
    });
}

template <typename T>
TensorT<T> matmul_nt(const TensorT<T>& a, const TensorT<T>& b) {
    require_matrix(a, "matmul_nt lhs");
    require_matrix(b, "matmul_nt rhs");
    i64 n = a.rows(), d = a.cols(), k = b.rows();
    if (b.cols() != d)
        throw DimensionError("matmul_nt: widths disagree, lhs " + shape_str(a.shape()) + " vs rhs " +
                             shape_str(b.shape()));
    std::vector<T> out(static_cast<size_t>(n * k), T(0));
    gemm_nt_acc(out.data(), a.data().data(), b.data().data(), n, d, k);
    auto result = TensorT<T>::from_data({n, k}, std::move(out));
    bool na = tracks_grad(a), nb = tracks_grad(b);
    return attach(std::move(result), {a, b}, [a, b, na, nb, n, d, k](TensorImplT<T>& o) {
        if (na) {
            a.impl()->ensure_grad();
            gemm_nn_acc(a.impl()->grad.data(), o.grad.data(), b.data().data(), n, d, k);
        }
        if (nb) {
            b.impl()->ensure_grad();
            gemm_tn_acc(b.impl()->grad.data(), o.grad.data(), a.data().data(), n, d, k);
        }
    });
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape())
        throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<T> out(a.data());
    const T* bd = b.data().data();
    for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
    auto result = TensorT<T>::from_data(a.shape(), std::move(out));
    bool na = tracks_grad(a), nb = tracks_grad(b);
    return attach(std::move(result), {a, b}, [a, b, na, nb](TensorImplT<T>& o) {
        if (na) {
            a.impl()->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) a.impl()->grad[i] += o.grad[i];
        }
        if (nb) {
            b.impl()->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) b.impl()->grad[i] += o.grad[i];
        }
    });
}

template <typename T>
TensorT<T> add_rowvec(const TensorT<T>& x, const TensorT<T>& bias) {
    i64 n = x.rows(), d = x.cols();
    if (bias.numel() != d)
        throw DimensionError("add_rowvec: bias " + shape_str(bias.shape()) + " does not match row width " +
                             std::to_string(d));
    std::vector<T> out(x.data());
    const T* bd = bias.data().data();
    for (i64 i = 0; i < n; ++i)
        for (i64 j = 0; j < d; ++j) out[static_cast<size_t>(i * d + j)] += bd[j];
    auto result = TensorT<T>::from_data(x.shape(), std::move(out));
    bool nx = tracks_grad(x), nb = tracks_grad(bias);
    return attach(std::move(result), {x, bias}, [x, bias, nx, nb, n, d](TensorImplT<T>& o) {
        if (nx) {
            x.impl()->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) x.impl()->grad[i] += o.grad[i];
        }
        if (nb) {
            bias.impl()->ensure_grad();
            for (i64 i = 0; i < n; ++i)
                for (i64 j = 0; j < d; ++j) bias.impl()->grad[static_cast<size_t>(j)] += o.grad[static_cast<size_t>(i * d + j)];
        }
    });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape())
        throw DimensionError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<T> out(a.data());
    const T* bd = b.data().data();
    for (size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
    auto result = TensorT<T>::from_data(a.shape(), std::move(out));
    bool na = tracks_grad(a), nb = tracks_grad(b);
    return attach(std::move(result), {a, b}, [a, b, na, nb](TensorImplT<T>& o) {
        if (na) {
            a.impl()->ensure_grad();
            const T* bd = b.data().data();
            for (size_t i = 0; i < o.grad.size(); ++i) a.impl()->grad[i] += o.grad[i] * bd[i];
        }
        if (nb) {
            b.impl()->ensure_grad();
            const T* ad = a.data().data();
            for (size_t i = 0; i < o.grad.size(); ++i) b.impl()->grad[i] += o.grad[i] * ad[i];
        }
    });
}

template <typename T>
TensorT<T> mul_scalar(const TensorT<T>& x, T c) {
    std::vector<T> out(x.data());
    for (T& v : out) v *= c;
    auto result = TensorT<T>::from_data(x.shape(), std::move(out));
    bool nx = tracks_grad(x);
    return attach(std::move(result), {x}, [x, nx, c](TensorImplT<T>& o) {
        if (!nx) return;
        x.impl()->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) x.impl()->grad[i] += c * o.grad[i];
    });
}

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
    std::vector<T> out(x.data());
    for (T& v : out) {
        double a = std::abs(double(v));
        if (a < g_relu_kink_min) g_relu_kink_min = a;
        if (v < T(0)) v = T(0);
    }
    auto result = TensorT<T>::from_data(x.shape(), std::move(out));
    bool nx = tracks_grad(x);
    return attach(std::move(result), {x}, [x, nx](TensorImplT<T>& o) {
        if (!nx) return;
        x.impl()->ensure_grad();
        const T* xd = x.data().data();
        for (size_t i = 0; i < o.grad.size(); ++i)
            if (xd[i] > T(0)) x.impl()->grad[i] += o.grad[i];
    });
}

template <typename T>
TensorT<T> softmax_rows(const TensorT<T>& x) {
    i64 n = x.rows(), c = x.cols();
    if (c < 1 || x.shape().size() != 2)
        throw DimensionError("softmax_rows: need an n x c matrix, got " + shape_str(x.shape()));
    std::vector<T> out(x.data());
    for (i64 i = 0; i < n; ++i) {
        T* row = out.data() + i * c;
        T mx = row[0];
        for (i64 j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        T s = T(0);
        for (i64 j = 0; j < c; ++j) {
            row[j] = std::exp(row[j] - mx);
            s += row[j];
        }
        for (i64 j = 0; j < c; ++j) row[j] /= s;
    }
    auto result = TensorT<T>::from_data(x.shape(), std::move(out));
    bool nx = tracks_grad(x);
    return attach(std::move(result), {x}, [x, nx, n, c](TensorImplT<T>& o) {
        if (!nx) return;
        x.impl()->ensure_grad();
        for (i64 i = 0; i < n; ++i) {
            const T* y = o.data.data() + i * c;
            const T* g = o.grad.data() + i * c;
            T dot = T(0);
            for (i64 j = 0; j < c; ++j) dot += g[j] * y[j];
            T* gx = x.impl()->grad.data() + i * c;
            for (i64 j = 0; j < c; ++j) gx[j] += y[j] * (g[j] - dot);
        }
    });
}

template <typename T>
TensorT<T> log_softmax_rows(const TensorT<T>& x) {
    i64 n = x.rows(), c = x.cols();
    if (c < 1 || x.shape().size() != 2)
        throw DimensionError("log_softmax_rows: need an n x c matrix, got " + shape_str(x.shape()));
    std::vector<T> out(x.data());
    for (i64 i = 0; i < n; ++i) {
        T* row = out.data() + i * c;
        T mx = row[0];
        for (i64 j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        T s = T(0);
        for (i64 j = 0; j < c; ++j) s += std::exp(row[j] - mx);
        T lse = mx + std::log(s);
        for (i64 j = 0; j < c; ++j) row[j] -= lse;
    }
    auto result = TensorT<T>::from_data(x.shape(), std::move(out));
    bool nx = tracks_grad(x);
    return attach(std::move(result), {x}, [x, nx, n, c](TensorImplT<T>& o) {
        if (!nx) return;
        x.impl()->ensure_grad();
        for (i64 i = 0; i < n; ++i) {
            const T* y = o.data.data() + i * c;
            const T* g = o.grad.data() + i * c;
            T gs = T(0);
            for (i64 j = 0; j < c; ++j) gs += g[j];
            T* gx = x.impl()->grad.data() + i * c;
            for (i64 j = 0; j < c; ++j) gx[j] += g[j] - std::exp(y[j]) * gs;
        }
    });
}

template <typename T>
TensorT<T> softmax_cols(const TensorT<T>& x) {
    i64 n = x.rows(), c = x.cols();
    if (n < 1 || x.shape().size() != 2)
        throw DimensionError("softmax_cols: need an n x c matrix, got " + shape_str(x.shape()));
    std::vector<T> out(x.data());
    for (i64 j = 0; j < c; ++j) {
        T mx = out[static_cast<size_t>(j)];
        for (i64 i = 1; i < n; ++i) mx = std::max(mx, out[static_cast<size_t>(i * c + j)]);
        T s = T(0);
        for (i64 i = 0; i < n; ++i) {
            T& v = out[static_cast<size_t>(i * c + j)];
            v = std::exp(v - mx);
            s += v;
        }
        for (i64 i = 0; i < n; ++i) out[static_cast<size_t>(i * c + j)] /= s;
    }
    auto result = TensorT<T>::from_data(x.shape(), std::move(out));
    bool nx = tracks_grad(x);
    return attach(std::move(result), {x}, [x, nx, n, c](TensorImplT<T>& o) {
        if (!nx) return;
        x.impl()->ensure_grad();
        for (i64 j = 0; j < c; ++j) {
            T dot = T(0);
            for (i64 i = 0; i < n; ++i)
                dot += o.grad[static_cast<size_t>(i * c + j)] * o.data[static_cast<size_t>(i * c + j)];
            for (i64 i = 0; i < n; ++i) {
                size_t k = static_cast<size_t>(i * c + j);
                x.impl()->grad[k] += o.data[k] * (o.grad[k] - dot);
            }
        }
    });
}

template <typename T>
TensorT<T> l1_normalize_rows(const TensorT<T>& x) {
    i64 n = x.rows(), c = x.cols();
    std::vector<T> out(x.data());
    std::vector<T> sums(static_cast<size_t>(n));
    for (i64 i = 0; i < n; ++i) {
        T s = T(0);
        for (i64 j = 0; j < c; ++j) {
            T v = out[static_cast<size_t>(i * c + j)];
            if (v < T(0))
                throw ValidationError("l1_normalize_rows: negative entry at row " + std::to_string(i));
            s += v;
        }
        if (!(s > T(0)))
            throw ValidationError("l1_normalize_rows: zero-sum row " + std::to_string(i));
        sums[static_cast<size_t>(i)] = s;
        for (i64 j = 0; j < c; ++j) out[static_cast<size_t>(i * c + j)] /= s;
    }
    auto result = TensorT<T>::from_data(x.shape(), std::move(out));
    bool nx = tracks_grad(x);
    return attach(std::move(result), {x}, [x, nx, n, c, sums](TensorImplT<T>& o) {
        if (!nx) return;
        x.impl()->ensure_grad();
        for (i64 i = 0; i < n; ++i) {
            const T* y = o.data.data() + i * c;
            const T* g = o.grad.data() + i * c;
            T dot = T(0);
            for (i64 j = 0; j < c; ++j) dot += g[j] * y[j];
            T inv = T(1) / sums[static_cast<size_t>(i)];
            T* gx = x.impl()->grad.data() + i * c;
            for (i64 j = 0; j < c; ++j) gx[j] += (g[j] - dot) * inv;
        }
    });
}

template <typename T>
TensorT<T> sum_all(const TensorT<T>& x) {
    T s = T(0);
    for (T v : x.data()) s += v;
    auto result = TensorT<T>::from_data({1}, {s});
    bool nx = tracks_grad(x);
    return attach(std::move(result), {x}, [x, nx](TensorImplT<T>& o) {
        if (!nx) return;
        x.impl()->ensure_grad();
        T g = o.grad[0];
        for (T& v : x.impl()->grad) v += g;
    });
}

template <typename T>
TensorT<T> concat_cols(const TensorT<T>& a, const TensorT<T>& b) {
    i64 n = a.rows(), da = a.cols(), db = b.cols();
    if (b.rows() != n)
        throw DimensionError("concat_cols: row counts disagree, " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    std::vector<T> out(static_cast<size_t>(n * (da + db)));
    for (i64 i = 0; i < n; ++i) {
        std::memcpy(out.data() + i * (da + db), a.data().data() + i * da, sizeof(T) * da);
        std::memcpy(out.data() + i * (da + db) + da, b.data().data() + i * db, sizeof(T) * db);
    }
    auto result = TensorT<T>::from_data({n, da + db}, std::move(out));
    bool na = tracks_grad(a), nb = tracks_grad(b);
    return attach(std::move(result), {a, b}, [a, b, na, nb, n, da, db](TensorImplT<T>& o) {
        for (i64 i = 0; i < n; ++i) {
            const T* g = o.grad.data() + i * (da + db);
            if (na) {
                a.impl()->ensure_grad();
                T* ga = a.impl()->grad.data() + i * da;
                for (i64 j = 0; j < da; ++j) ga[j] += g[j];
            }
            if (nb) {
                b.impl()->ensure_grad();
                T* gb = b.impl()->grad.data() + i * db;
                for (i64 j = 0; j < db; ++j) gb[j] += g[da + j];
            }
        }
    });
}

template <typename T>
TensorT<T> gather_rows(const TensorT<T>& x, const std::vector<int32_t>& index) {
    i64 m = x.rows(), d = x.cols();
    i64 n = static_cast<i64>(index.size());
    std::vector<T> out(static_cast<size_t>(n * d));
    for (i64 i = 0; i < n; ++i) {
        int32_t r = index[static_cast<size_t>(i)];
        if (r < 0 || r >= m)
            throw ContractError("gather_rows: index " + std::to_string(r) + " at position " +
                                std::to_string(i) + " outside [0," + std::to_string(m) + ")");
        std::memcpy(out.data() + i * d, x.data().data() + static_cast<i64>(r) * d, sizeof(T) * d);
    }
    auto result = TensorT<T>::from_data({n, d}, std::move(out));
    bool nx = tracks_grad(x);
    return attach(std::move(result), {x}, [x, nx, index, n, d](TensorImplT<T>& o) {
        if (!nx) return;
        x.impl()->ensure_grad();
        for (i64 i = 0; i < n; ++i) {
            T* gx = x.impl()->grad.data() + static_cast<i64>(index[static_cast<size_t>(i)]) * d;
            const T* g = o.grad.data() + i * d;
            for (i64 j = 0; j < d; ++j) gx[j] += g[j];
        }
    });
}

template <typename T>
TensorT<T> segment_mean_broadcast(const TensorT<T>& x, const std::vector<int32_t>& cell_of_row,
                                  int64_t cell_count) {
    i64 n = x.rows(), d = x.cols();
    if (static_cast<i64>(cell_of_row.size()) != n)
        throw ContractError("segment_mean_broadcast: cell list length " +
                            std::to_string(cell_of_row.size()) + " does not match " + std::to_string(n) +
                            " rows");
    std::vector<T> sums(static_cast<size_t>(cell_count * d), T(0));
    std::vector<i64> counts(static_cast<size_t>(cell_count), 0);
    for (i64 i = 0; i < n; ++i) {
        int32_t cl = cell_of_row[static_cast<size_t>(i)];
        if (cl < 0 || cl >= cell_count)
            throw ContractError("segment_mean_broadcast: cell id " + std::to_string(cl) + " outside [0," +
                                std::to_string(cell_count) + ")");
        counts[static_cast<size_t>(cl)]++;
        T* srow = sums.data() + static_cast<i64>(cl) * d;
        const T* xrow = x.data().data() + i * d;
        for (i64 j = 0; j < d; ++j) srow[j] += xrow[j];
    }
    std::vector<T> out(static_cast<size_t>(n * d));
    for (i64 i = 0; i < n; ++i) {
        int32_t cl = cell_of_row[static_cast<size_t>(i)];
        T inv = T(1) / static_cast<T>(counts[static_cast<size_t>(cl)]);
        const T* srow = sums.data() + static_cast<i64>(cl) * d;
        T* orow = out.data() + i * d;
        for (i64 j = 0; j < d; ++j) orow[j] = srow[j] * inv;
    }
    auto result = TensorT<T>::from_data({n, d}, std::move(out));
    bool nx = tracks_grad(x);
    // the operator is a symmetric projection, so the backward map is itself
    return attach(std::move(result), {x}, [x, nx, cell_of_row, cell_count, n, d](TensorImplT<T>& o) {
        if (!nx) return;
        x.impl()->ensure_grad();
        std::vector<T> gsum(static_cast<size_t>(cell_count * d), T(0));
        std::vector<i64> counts(static_cast<size_t>(cell_count), 0);
        for (i64 i = 0; i < n; ++i) {
            int32_t cl = cell_of_row[static_cast<size_t>(i)];
            counts[static_cast<size_t>(cl)]++;
            T* srow = gsum.data() + static_cast<i64>(cl) * d;
            const T* g = o.grad.data() + i * d;
            for (i64 j = 0; j < d; ++j) srow[j] += g[j];
        }
        for (i64 i = 0; i < n; ++i) {
            int32_t cl = cell_of_row[static_cast<size_t>(i)];
            T inv = T(1) / static_cast<T>(counts[static_cast<size_t>(cl)]);
            const T* srow = gsum.data() + static_cast<i64>(cl) * d;
            T* gx = x.impl()->grad.data() + i * d;
            for (i64 j = 0; j < d; ++j) gx[j] += srow[j] * inv;
        }
    });
}

template <typename T>
TensorT<T> im2col3x3(const TensorT<T>& x, int64_t height, int64_t width) {
    i64 c = x.cols();
    if (x.rows() != height * width)
        throw DimensionError("im2col3x3: grid " + std::to_string(height) + "x" + std::to_string(width) +
                             " does not match " + std::to_string(x.rows()) + " rows");
    // edge-replicate padding keeps constant images constant through the taps
    auto clampi = [](i64 v, i64 hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); };
    std::vector<T> out(static_cast<size_t>(height * width * 9 * c), T(0));
    for (i64 v = 0; v < height; ++v) {
        for (i64 u = 0; u < width; ++u) {
            T* orow = out.data() + (v * width + u) * 9 * c;
            int tap = 0;
            for (i64 dv = -1; dv <= 1; ++dv) {
                for (i64 du = -1; du <= 1; ++du, ++tap) {
                    i64 sv = clampi(v + dv, height), su = clampi(u + du, width);
                    const T* xrow = x.data().data() + (sv * width + su) * c;
                    std::memcpy(orow + tap * c, xrow, sizeof(T) * c);
                }
            }
        }
    }
    auto result = TensorT<T>::from_data({height * width, 9 * c}, std::move(out));
    bool nx = tracks_grad(x);
    return attach(std::move(result), {x}, [x, nx, clampi, height, width, c](TensorImplT<T>& o) {
        if (!nx) return;
        x.impl()->ensure_grad();
        for (i64 v = 0; v < height; ++v) {
            for (i64 u = 0; u < width; ++u) {
                const T* g = o.grad.data() + (v * width + u) * 9 * c;
                int tap = 0;
                for (i64 dv = -1; dv <= 1; ++dv) {
                    for (i64 du = -1; du <= 1; ++du, ++tap) {
                        i64 sv = clampi(v + dv, height), su = clampi(u + du, width);
                        T* gx = x.impl()->grad.data() + (sv * width + su) * c;
                        const T* gtap = g + tap * c;
                        for (i64 j = 0; j < c; ++j) gx[j] += gtap[j];
                    }
                }
            }
        }
    });
}

namespace {

// shared kernel for the averaged and per-row KL variants
template <typename T>
TensorT<T> kl_impl(const TensorT<T>& p, const TensorT<T>& q, bool averaged) {
    if (p.shape() != q.shape() || p.shape().size() != 2)
        throw DimensionError("kl_divergence: shape mismatch " + shape_str(p.shape()) + " vs " +
                             shape_str(q.shape()));
    check_rows_stochastic(p, "kl_divergence first argument");
    check_rows_stochastic(q, "kl_divergence second argument");
    i64 n = p.rows(), c = p.cols();
    const T eps = static_cast<T>(kKlClamp);
    std::vector<T> rowvals(static_cast<size_t>(n), T(0));
    for (i64 i = 0; i < n; ++i) {
        T acc = T(0);
        for (i64 j = 0; j < c; ++j) {
            T pv = p.at(i, j);
            T pc = std::max(pv, eps);
            T qc = std::max(q.at(i, j), eps);
            acc += pv * (std::log(pc) - std::log(qc));
        }
        rowvals[static_cast<size_t>(i)] = acc;
    }
    TensorT<T> result;
    if (averaged) {
        T s = T(0);
        for (T v : rowvals) s += v;
        result = TensorT<T>::from_data({1}, {s / static_cast<T>(n)});
    } else {
        result = TensorT<T>::from_data({n, 1}, rowvals);
    }
    bool np = tracks_grad(p), nq = tracks_grad(q);
    return attach(std::move(result), {p, q}, [p, q, np, nq, n, c, eps, averaged](TensorImplT<T>& o) {
        for (i64 i = 0; i < n; ++i) {
            T g = averaged ? o.grad[0] / static_cast<T>(n) : o.grad[static_cast<size_t>(i)];
            if (g == T(0)) continue;
            for (i64 j = 0; j < c; ++j) {
                T pv = p.at(i, j);
                T qv = q.at(i, j);
                T pc = std::max(pv, eps);
                T qc = std::max(qv, eps);
                if (np) {
                    p.impl()->ensure_grad();
                    T d = std::log(pc) - std::log(qc) + (pv > eps ? pv / pc : T(0));
                    p.impl()->grad[static_cast<size_t>(i * c + j)] += g * d;
                }
                if (nq) {
                    q.impl()->ensure_grad();
                    if (qv > eps) q.impl()->grad[static_cast<size_t>(i * c + j)] += -g * pv / qc;
                }
            }
        }
    });
}

// shared kernel for the averaged and per-row cross-entropy variants
template <typename T>
TensorT<T> ce_impl(const TensorT<T>& logits, const std::vector<int32_t>& labels,
                   const std::vector<T>& class_weights, bool averaged) {
    i64 n = logits.rows(), c = logits.cols();
    if (static_cast<i64>(labels.size()) != n)
        throw ContractError("cross_entropy: label count " + std::to_string(labels.size()) +
                            " does not match " + std::to_string(n) + " rows");
    if (static_cast<i64>(class_weights.size()) != c)
        throw ContractError("cross_entropy: weight count " + std::to_string(class_weights.size()) +
                            " does not match " + std::to_string(c) + " classes");
    for (i64 j = 0; j < c; ++j)
        if (!(class_weights[static_cast<size_t>(j)] > T(0)))
            throw ValidationError("cross_entropy: class weight " + std::to_string(j) +
                                  " is not strictly positive");
    i64 kept = 0;
    for (int32_t y : labels) {
        if (y == -1) continue;
        if (y < 0 || y >= c)
            throw ContractError("cross_entropy: label " + std::to_string(y) + " outside [0," +
                                std::to_string(c) + ")");
        ++kept;
    }

    // per-row log-softmax, computed locally to keep a single tape node
    std::vector<T> logp(logits.data());
    for (i64 i = 0; i < n; ++i) {
        T* row = logp.data() + i * c;
        T mx = row[0];
        for (i64 j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        T s = T(0);
        for (i64 j = 0; j < c; ++j) s += std::exp(row[j] - mx);
        T lse = mx + std::log(s);
        for (i64 j = 0; j < c; ++j) row[j] -= lse;
    }
    std::vector<T> rowvals(static_cast<size_t>(n), T(0));
    for (i64 i = 0; i < n; ++i) {
        int32_t y = labels[static_cast<size_t>(i)];
        if (y == -1) continue;
        rowvals[static_cast<size_t>(i)] =
            -class_weights[static_cast<size_t>(y)] * logp[static_cast<size_t>(i * c + y)];
    }
    TensorT<T> result;
    if (averaged) {
        T s = T(0);
        for (T v : rowvals) s += v;
        result = TensorT<T>::from_data({1}, {kept > 0 ? s / static_cast<T>(kept) : T(0)});
    } else {
        result = TensorT<T>::from_data({n, 1}, rowvals);
    }
    bool nx = tracks_grad(logits);
    return attach(std::move(result), {logits},
                  [logits, nx, labels, class_weights, logp, n, c, kept, averaged](TensorImplT<T>& o) {
                      if (!nx || kept == 0) return;
                      logits.impl()->ensure_grad();
                      for (i64 i = 0; i < n; ++i) {
                          int32_t y = labels[static_cast<size_t>(i)];
                          if (y == -1) continue;
                          T g = averaged ? o.grad[0] / static_cast<T>(kept) : o.grad[static_cast<size_t>(i)];
                          if (g == T(0)) continue;
                          T w = class_weights[static_cast<size_t>(y)];
                          T* gx = logits.impl()->grad.data() + i * c;
                          for (i64 j = 0; j < c; ++j) {
                              T soft = std::exp(logp[static_cast<size_t>(i * c + j)]);
                              gx[j] += g * w * (soft - (j == y ? T(1) : T(0)));
                          }
                      }
                  });
}

} // namespace

template <typename T>
TensorT<T> kl_divergence(const TensorT<T>& p, const TensorT<T>& q) {
    return kl_impl(p, q, true);
}

template <typename T>
TensorT<T> kl_divergence_rows(const TensorT<T>& p, const TensorT<T>& q) {
    return kl_impl(p, q, false);
}

template <typename T>
TensorT<T> weighted_cross_entropy(const TensorT<T>& logits, const std::vector<int32_t>& labels,
                                  const std::vector<T>& class_weights) {
    return ce_impl(logits, labels, class_weights, true);
}

template <typename T>
TensorT<T> cross_entropy_rows(const TensorT<T>& logits, const std::vector<int32_t>& labels,
                              const std::vector<T>& class_weights) {
    return ce_impl(logits, labels, class_weights, false);
}

template <typename T>
TensorT<T> batchnorm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                     std::vector<T>& running_mean, std::vector<T>& running_var, bool training,
                     bool update_running, T momentum, T eps) {
    i64 n = x.rows(), d = x.cols();
    if (gamma.numel() != d || beta.numel() != d)
        throw DimensionError("batchnorm: affine parameters do not match width " + std::to_string(d));
    if (static_cast<i64>(running_mean.size()) != d || static_cast<i64>(running_var.size()) != d)
        throw ContractError("batchnorm: running statistics do not match width " + std::to_string(d));
    if (training && n < 2)
        throw ContractError("batchnorm: training-mode statistics undefined for batch of " +
                            std::to_string(n));

    std::vector<T> mean(static_cast<size_t>(d)), var(static_cast<size_t>(d));
    if (training) {
        for (i64 j = 0; j < d; ++j) {
            T m = T(0);
            for (i64 i = 0; i < n; ++i) m += x.at(i, j);
            m /= static_cast<T>(n);
            T v = T(0);
            for (i64 i = 0; i < n; ++i) {
                T dlt = x.at(i, j) - m;
                v += dlt * dlt;
            }
            v /= static_cast<T>(n);
            mean[static_cast<size_t>(j)] = m;
            var[static_cast<size_t>(j)] = v;
        }
        if (update_running) {
            for (i64 j = 0; j < d; ++j) {
                running_mean[static_cast<size_t>(j)] =
                    momentum * running_mean[static_cast<size_t>(j)] + (T(1) - momentum) * mean[static_cast<size_t>(j)];
                running_var[static_cast<size_t>(j)] =
                    momentum * running_var[static_cast<size_t>(j)] + (T(1) - momentum) * var[static_cast<size_t>(j)];
            }
        }
    } else {
        mean = running_mean;
        var = running_var;
    }

    std::vector<T> inv_sigma(static_cast<size_t>(d));
    for (i64 j = 0; j < d; ++j)
        inv_sigma[static_cast<size_t>(j)] = T(1) / std::sqrt(var[static_cast<size_t>(j)] + eps);

    std::vector<T> xhat(static_cast<size_t>(n * d));
    std::vector<T> out(static_cast<size_t>(n * d));
    for (i64 i = 0; i < n; ++i) {
        for (i64 j = 0; j < d; ++j) {
            T h = (x.at(i, j) - mean[static_cast<size_t>(j)]) * inv_sigma[static_cast<size_t>(j)];
            xhat[static_cast<size_t>(i * d + j)] = h;
            out[static_cast<size_t>(i * d + j)] =
                gamma.data()[static_cast<size_t>(j)] * h + beta.data()[static_cast<size_t>(j)];
        }
    }
    auto result = TensorT<T>::from_data(x.shape(), std::move(out));
    bool nx = tracks_grad(x), ng = tracks_grad(gamma), nb = tracks_grad(beta);
    return attach(std::move(result), {x, gamma, beta},
                  [x, gamma, beta, nx, ng, nb, xhat, inv_sigma, training, n, d](TensorImplT<T>& o) {
                      for (i64 j = 0; j < d; ++j) {
                          T gsum = T(0), gdot = T(0);
                          for (i64 i = 0; i < n; ++i) {
                              T g = o.grad[static_cast<size_t>(i * d + j)];
                              gsum += g;
                              gdot += g * xhat[static_cast<size_t>(i * d + j)];
                          }
                          if (ng) {
                              gamma.impl()->ensure_grad();
                              gamma.impl()->grad[static_cast<size_t>(j)] += gdot;
                          }
                          if (nb) {
                              beta.impl()->ensure_grad();
                              beta.impl()->grad[static_cast<size_t>(j)] += gsum;
                          }
                          if (nx) {
                              x.impl()->ensure_grad();
                              T gm = gamma.data()[static_cast<size_t>(j)] * inv_sigma[static_cast<size_t>(j)];
                              if (training) {
                                  T inv_n = T(1) / static_cast<T>(n);
                                  for (i64 i = 0; i < n; ++i) {
                                      size_t k = static_cast<size_t>(i * d + j);
                                      x.impl()->grad[k] +=
                                          gm * (o.grad[k] - gsum * inv_n - xhat[k] * gdot * inv_n);
                                  }
                              } else {
                                  for (i64 i = 0; i < n; ++i) {
                                      size_t k = static_cast<size_t>(i * d + j);
                                      x.impl()->grad[k] += gm * o.grad[k];
                                  }
                              }
                          }
                      }
                  });
}

#define XFUSE_INSTANTIATE_OPS(T)                                                                        \
    template TensorT<T> matmul<T>(const TensorT<T>&, const TensorT<T>&);                                \
    template TensorT<T> matmul_nt<T>(const TensorT<T>&, const TensorT<T>&);                             \
    template TensorT<T> add<T>(const TensorT<T>&, const TensorT<T>&);                                   \
    template TensorT<T> add_rowvec<T>(const TensorT<T>&, const TensorT<T>&);                            \
    template TensorT<T> mul<T>(const TensorT<T>&, const TensorT<T>&);                                   \
    template TensorT<T> mul_scalar<T>(const TensorT<T>&, T);                                            \
    template TensorT<T> relu<T>(const TensorT<T>&);                                                     \
    template TensorT<T> softmax_rows<T>(const TensorT<T>&);                                             \
    template TensorT<T> log_softmax_rows<T>(const TensorT<T>&);                                         \
    template TensorT<T> softmax_cols<T>(const TensorT<T>&);                                             \
    template TensorT<T> l1_normalize_rows<T>(const TensorT<T>&);                                        \
    template TensorT<T> sum_all<T>(const TensorT<T>&);                                                  \
    template TensorT<T> concat_cols<T>(const TensorT<T>&, const TensorT<T>&);                           \
    template TensorT<T> gather_rows<T>(const TensorT<T>&, const std::vector<int32_t>&);                 \
    template TensorT<T> segment_mean_broadcast<T>(const TensorT<T>&, const std::vector<int32_t>&,       \
                                                  int64_t);                                             \
    template TensorT<T> im2col3x3<T>(const TensorT<T>&, int64_t, int64_t);                              \
    template TensorT<T> kl_divergence<T>(const TensorT<T>&, const TensorT<T>&);                         \
    template TensorT<T> kl_divergence_rows<T>(const TensorT<T>&, const TensorT<T>&);                    \
    template TensorT<T> weighted_cross_entropy<T>(const TensorT<T>&, const std::vector<int32_t>&,       \
                                                  const std::vector<T>&);                               \
    template TensorT<T> cross_entropy_rows<T>(const TensorT<T>&, const std::vector<int32_t>&,           \
                                              const std::vector<T>&);                                   \
    template TensorT<T> batchnorm<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,           \
                                     std::vector<T>&, std::vector<T>&, bool, bool, T, T);

XFUSE_INSTANTIATE_OPS(float)
XFUSE_INSTANTIATE_OPS(double)

#undef XFUSE_INSTANTIATE_OPS

} // namespace xfuse
