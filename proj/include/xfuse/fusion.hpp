#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xfuse/ops.hpp"
#include "xfuse/tensor.hpp"

namespace xfuse {

// How raw attention logits become a row-stochastic map. Double is the
// column-softmax followed by a row L1 pass; SoftmaxK is a plain row softmax
// over the memory axis.
enum class AttnNorm { Double, SoftmaxK };

AttnNorm attn_norm_from_name(const std::string& name);
std::string attn_norm_name(AttnNorm norm);

// Learnable key/value memory shared across the whole dataset; attention
// against it costs O(N*K*D) instead of the O(N^2*D) of self-attention.
template <typename T>
struct MemoryUnitsT {
    ParameterT<T> key;   // K x D
    ParameterT<T> value; // K x D
};

template <typename T>
TensorT<T> attention_map(const TensorT<T>& features, const MemoryUnitsT<T>& mem, AttnNorm norm);

// A = Norm(F * Mk^T); out = A * Mv + F (residual)
template <typename T>
TensorT<T> memorized_attention(const TensorT<T>& features, const MemoryUnitsT<T>& mem,
                               AttnNorm norm);

struct FlopReport {
    std::string variant; // memorized | dense_self
    int64_t n = 0, k = 0, d = 0;
    int64_t flops_matmul = 0; // multiply-add counted as 2
    int64_t flops_norm = 0;
    int64_t flops = 0; // total
};

FlopReport count_flops(const std::string& variant, int64_t n, int64_t k, int64_t d,
                       AttnNorm norm = AttnNorm::Double);

// forward-only kernels for the wall-clock benchmark
void bench_memorized_forward(int64_t n, int64_t k, int64_t d, uint64_t seed, AttnNorm norm);
void bench_dense_self_forward(int64_t n, int64_t d, uint64_t seed);

struct BenchRow {
    std::string variant;
    int64_t n, k, d;
    int64_t flops;
    int64_t wall_ns; // median over repeats
};

std::vector<BenchRow> bench_attention(const std::vector<int64_t>& n_list, int64_t k, int64_t d,
                                      int repeats, AttnNorm norm = AttnNorm::Double);

} // namespace xfuse
