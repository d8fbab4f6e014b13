#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "xfuse/errors.hpp"

namespace xfuse {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s);

template <typename T>
struct TensorImplT;

// One recorded op: the inputs it consumed and how to push gradients back.
template <typename T>
struct NodeT {
    std::vector<std::shared_ptr<TensorImplT<T>>> inputs;
    std::function<void(TensorImplT<T>&)> backward;
};

template <typename T>
struct TensorImplT {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad; // allocated lazily, same length as data once present
    bool requires_grad = false;
    std::shared_ptr<NodeT<T>> node;

    int64_t numel() const { return static_cast<int64_t>(data.size()); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
    }
};

// Dense row-major tensor handle participating in a reverse-mode tape.
// Copies are shallow; ops produce fresh impls.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    static TensorT zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static TensorT filled(Shape shape, T value, bool requires_grad = false) {
        auto impl = std::make_shared<TensorImplT<T>>();
        int64_t n = shape_numel(shape);
        if (n <= 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
        impl->shape = std::move(shape);
        impl->data.assign(static_cast<size_t>(n), value);
        impl->requires_grad = requires_grad;
        return TensorT(std::move(impl));
    }

    static TensorT from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
        auto impl = std::make_shared<TensorImplT<T>>();
        int64_t n = shape_numel(shape);
        if (n <= 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
        if (static_cast<size_t>(n) != data.size())
            throw DimensionError("data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        impl->shape = std::move(shape);
        impl->data = std::move(data);
        impl->requires_grad = requires_grad;
        return TensorT(std::move(impl));
    }

    static TensorT scalar(T value) { return from_data({1}, {value}); }

    bool defined() const { return impl_ != nullptr; }

    const Shape& shape() const { return impl_->shape; }
    int64_t numel() const { return impl_->numel(); }

    // rank-2 accessors; rank-1 tensors count as n x 1
    int64_t rows() const { return impl_->shape[0]; }
    int64_t cols() const { return impl_->shape.size() > 1 ? impl_->shape[1] : 1; }

    std::vector<T>& data() { return impl_->data; }
    const std::vector<T>& data() const { return impl_->data; }

    std::vector<T>& grad() { return impl_->grad; }
    const std::vector<T>& grad() const { return impl_->grad; }
    bool has_grad() const { return !impl_->grad.empty(); }
    void zero_grad() { impl_->grad.clear(); }

    T& at(int64_t r, int64_t c) { return impl_->data[static_cast<size_t>(r * cols() + c)]; }
    T at(int64_t r, int64_t c) const { return impl_->data[static_cast<size_t>(r * cols() + c)]; }

    T item() const {
        if (numel() != 1) throw ContractError("item() on non-scalar tensor of shape " + shape_str(shape()));
        return impl_->data[0];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }

    // Value copy with no tape node and no grad flow.
    TensorT detach() const {
        auto impl = std::make_shared<TensorImplT<T>>();
        impl->shape = impl_->shape;
        impl->data = impl_->data;
        return TensorT(std::move(impl));
    }

    std::shared_ptr<TensorImplT<T>>& impl() { return impl_; }
    const std::shared_ptr<TensorImplT<T>>& impl() const { return impl_; }

private:
    explicit TensorT(std::shared_ptr<TensorImplT<T>> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<TensorImplT<T>> impl_;
};

using Tensor = TensorT<float>;

// While alive, ops record no tape nodes (teacher forwards, oracles, eval).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

// Reverse-mode sweep from a scalar loss. Gradients of requires_grad leaves
// accumulate (no implicit zeroing across calls); the traversed tape is
// released afterwards, so a second backward through the same loss throws.
template <typename T>
void backward(TensorT<T>& loss);

// Named trainable array plus its Adam state.
template <typename T>
struct ParameterT {
    std::string name;
    TensorT<T> value;
    std::vector<T> adam_m;
    std::vector<T> adam_v;
    int64_t step_count = 0;

    ParameterT() = default;
    ParameterT(std::string n, TensorT<T> v) : name(std::move(n)), value(std::move(v)) {
        value.set_requires_grad(true);
        adam_m.assign(value.data().size(), T(0));
        adam_v.assign(value.data().size(), T(0));
    }
};

using Parameter = ParameterT<float>;

} // namespace xfuse
