#include "xfuse/fusion.hpp"

#include <algorithm>
#include <chrono>

#include "xfuse/rng.hpp"

namespace xfuse {

AttnNorm attn_norm_from_name(const std::string& name) {
    if (name == "double") return AttnNorm::Double;
    if (name == "softmax_k") return AttnNorm::SoftmaxK;
    throw ParameterError("unknown attn_norm '" + name + "' (expected double|softmax_k)");
}

std::string attn_norm_name(AttnNorm norm) {
    return norm == AttnNorm::Double ? "double" : "softmax_k";
}

template <typename T>
TensorT<T> attention_map(const TensorT<T>& features, const MemoryUnitsT<T>& mem, AttnNorm norm) {
    if (features.cols() != mem.key.value.cols())
        throw DimensionError("attention: feature width " + shape_str(features.shape()) +
                             " does not match memory key " + shape_str(mem.key.value.shape()));
    auto logits = matmul_nt(features, mem.key.value);
    if (norm == AttnNorm::SoftmaxK) return softmax_rows(logits);
    return l1_normalize_rows(softmax_cols(logits));
}

template <typename T>
TensorT<T> memorized_attention(const TensorT<T>& features, const MemoryUnitsT<T>& mem,
                               AttnNorm norm) {
    auto a = attention_map(features, mem, norm);
    return add(matmul(a, mem.value.value), features);
}

template TensorT<float> attention_map<float>(const TensorT<float>&, const MemoryUnitsT<float>&,
                                             AttnNorm);
template TensorT<double> attention_map<double>(const TensorT<double>&, const MemoryUnitsT<double>&,
                                               AttnNorm);
template TensorT<float> memorized_attention<float>(const TensorT<float>&,
                                                   const MemoryUnitsT<float>&, AttnNorm);
template TensorT<double> memorized_attention<double>(const TensorT<double>&,
                                                     const MemoryUnitsT<double>&, AttnNorm);

FlopReport count_flops(const std::string& variant, int64_t n, int64_t k, int64_t d, AttnNorm norm) {
    if (n <= 0 || d <= 0 || (variant == "memorized" && k <= 0))
        throw ParameterError("count_flops: extents must be positive");
    FlopReport report;
    report.variant = variant;
    report.n = n;
    report.d = d;
    if (variant == "memorized") {
        report.k = k;
        report.flops_matmul = 4 * n * k * d;
        // softmax pass: max scan, subtract+exp, sum, divide; the double norm
        // adds an L1 pass (sum + divide)
        report.flops_norm = (norm == AttnNorm::Double ? 7 : 5) * n * k;
    } else if (variant == "dense_self") {
        report.k = n;
        report.flops_matmul = 4 * n * n * d;
        report.flops_norm = 5 * n * n;
    } else {
        throw ParameterError("count_flops: unknown variant '" + variant + "'");
    }
    report.flops = report.flops_matmul + report.flops_norm;
    return report;
}

namespace {

Tensor random_features(int64_t n, int64_t d, uint64_t seed) {
    Rng rng(seed);
    std::vector<float> data(static_cast<size_t>(n * d));
    for (float& v : data) v = static_cast<float>(rng.normal() * 0.5);
    return Tensor::from_data({n, d}, std::move(data));
}

} // namespace

void bench_memorized_forward(int64_t n, int64_t k, int64_t d, uint64_t seed, AttnNorm norm) {
    NoGradGuard ng;
    auto f = random_features(n, d, seed);
    MemoryUnitsT<float> mem{ParameterT<float>("mk", random_features(k, d, seed + 1)),
                            ParameterT<float>("mv", random_features(k, d, seed + 2))};
    auto out = memorized_attention(f, mem, norm);
    volatile float sink = out.data()[0];
    (void)sink;
}

void bench_dense_self_forward(int64_t n, int64_t d, uint64_t seed) {
    NoGradGuard ng;
    auto f = random_features(n, d, seed);
    auto a = softmax_rows(matmul_nt(f, f));
    auto out = matmul(a, f);
    volatile float sink = out.data()[0];
    (void)sink;
}

std::vector<BenchRow> bench_attention(const std::vector<int64_t>& n_list, int64_t k, int64_t d,
                                      int repeats, AttnNorm norm) {
    using clock = std::chrono::steady_clock;
    std::vector<BenchRow> rows;
    auto median_ns = [&](auto&& fn) -> int64_t {
        std::vector<int64_t> samples;
        fn(0); // warm-up
        for (int r = 0; r < std::max(1, repeats); ++r) {
            auto t0 = clock::now();
            fn(r + 1);
            auto t1 = clock::now();
            samples.push_back(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
        }
        std::sort(samples.begin(), samples.end());
        return samples[samples.size() / 2];
    };
    for (int64_t n : n_list) {
        BenchRow mem_row;
        mem_row.variant = "memorized";
        mem_row.n = n;
        mem_row.k = k;
        mem_row.d = d;
        mem_row.flops = count_flops("memorized", n, k, d, norm).flops;
        mem_row.wall_ns =
            median_ns([&](int r) { bench_memorized_forward(n, k, d, 17 + static_cast<uint64_t>(r), norm); });
        rows.push_back(mem_row);

        BenchRow dense_row;
        dense_row.variant = "dense_self";
        dense_row.n = n;
        dense_row.k = n;
        dense_row.d = d;
        dense_row.flops = count_flops("dense_self", n, 0, d).flops;
        dense_row.wall_ns =
            median_ns([&](int r) { bench_dense_self_forward(n, d, 23 + static_cast<uint64_t>(r)); });
        rows.push_back(dense_row);
    }
    return rows;
}

} // namespace xfuse
