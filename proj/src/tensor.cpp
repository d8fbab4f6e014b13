#include "xfuse/tensor.hpp"

#include <algorithm>
#include <unordered_set>

namespace xfuse {

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    out += "]";
    return out;
}

namespace {
thread_local int g_no_grad_depth = 0;
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

bool grad_enabled() { return g_no_grad_depth == 0; }

template <typename T>
void backward(TensorT<T>& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ContractError("backward: loss must be a defined scalar tensor");
    auto root = loss.impl();
    if (!root->node) {
        if (root->requires_grad) { // bare leaf used as loss
            root->ensure_grad();
            root->grad[0] += T(1);
            return;
        }
        throw ContractError("backward: loss is not connected to a recorded tape");
    }

    // deterministic post-order over the recorded graph
    std::vector<TensorImplT<T>*> order;
    std::unordered_set<TensorImplT<T>*> visited;
    std::vector<std::pair<TensorImplT<T>*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [impl, idx] = stack.back();
        if (impl->node && idx < impl->node->inputs.size()) {
            TensorImplT<T>* child = impl->node->inputs[idx].get();
            ++idx;
            if (child->node && !visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(impl);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImplT<T>* impl = *it;
        if (impl->node && !impl->grad.empty()) impl->node->backward(*impl);
    }
    // release the tape; activations die with their last handle
    for (TensorImplT<T>* impl : order) impl->node.reset();
}

template void backward<float>(TensorT<float>&);
template void backward<double>(TensorT<double>&);

} // namespace xfuse
