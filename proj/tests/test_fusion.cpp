#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "xfuse/fusion.hpp"
#include "xfuse/gradcheck.hpp"
#include "xfuse/models.hpp"

using namespace xfuse;

namespace {

template <typename T>
MemoryUnitsT<T> random_memory(Rng& rng, int64_t k, int64_t d, double scale = 0.7) {
    return MemoryUnitsT<T>{
        ParameterT<T>("mk", testutil::random_matrix<T>(rng, k, d, scale)),
        ParameterT<T>("mv", testutil::random_matrix<T>(rng, k, d, scale)),
    };
}

// independent dense evaluation of one memorized-attention stage in double
std::vector<double> attention_oracle(const std::vector<double>& f, const std::vector<double>& mk,
                                     const std::vector<double>& mv, int64_t n, int64_t k, int64_t d,
                                     AttnNorm norm) {
    std::vector<double> logits(static_cast<size_t>(n * k), 0.0);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t t = 0; t < k; ++t)
            for (int64_t j = 0; j < d; ++j)
                logits[static_cast<size_t>(i * k + t)] +=
                    f[static_cast<size_t>(i * d + j)] * mk[static_cast<size_t>(t * d + j)];
    std::vector<double> att(static_cast<size_t>(n * k), 0.0);
    if (norm == AttnNorm::SoftmaxK) {
        for (int64_t i = 0; i < n; ++i) {
            double mx = logits[static_cast<size_t>(i * k)];
            for (int64_t t = 1; t < k; ++t) mx = std::max(mx, logits[static_cast<size_t>(i * k + t)]);
            double s = 0;
            for (int64_t t = 0; t < k; ++t) {
                att[static_cast<size_t>(i * k + t)] = std::exp(logits[static_cast<size_t>(i * k + t)] - mx);
                s += att[static_cast<size_t>(i * k + t)];
            }
            for (int64_t t = 0; t < k; ++t) att[static_cast<size_t>(i * k + t)] /= s;
        }
    } else {
        // column softmax then row L1
        for (int64_t t = 0; t < k; ++t) {
            double mx = logits[static_cast<size_t>(t)];
            for (int64_t i = 1; i < n; ++i) mx = std::max(mx, logits[static_cast<size_t>(i * k + t)]);
            double s = 0;
            for (int64_t i = 0; i < n; ++i) {
                att[static_cast<size_t>(i * k + t)] = std::exp(logits[static_cast<size_t>(i * k + t)] - mx);
                s += att[static_cast<size_t>(i * k + t)];
            }
            for (int64_t i = 0; i < n; ++i) att[static_cast<size_t>(i * k + t)] /= s;
        }
        for (int64_t i = 0; i < n; ++i) {
            double s = 0;
            for (int64_t t = 0; t < k; ++t) s += att[static_cast<size_t>(i * k + t)];
            for (int64_t t = 0; t < k; ++t) att[static_cast<size_t>(i * k + t)] /= s;
        }
    }
    std::vector<double> out(static_cast<size_t>(n * d), 0.0);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) {
            double acc = f[static_cast<size_t>(i * d + j)];
            for (int64_t t = 0; t < k; ++t)
                acc += att[static_cast<size_t>(i * k + t)] * mv[static_cast<size_t>(t * d + j)];
            out[static_cast<size_t>(i * d + j)] = acc;
        }
    return out;
}

} // namespace

TEST_CASE("residual identity: zero value memory makes attention the identity") {
    Rng rng(2);
    for (AttnNorm norm : {AttnNorm::Double, AttnNorm::SoftmaxK}) {
        auto mem = random_memory<float>(rng, 4, 5);
        for (auto& v : mem.value.value.data()) v = 0.0f;
        auto f = testutil::random_matrix<float>(rng, 7, 5);
        auto out = memorized_attention(f, mem, norm);
        CHECK(out.data() == f.data()); // exact
    }
}

TEST_CASE("zero features give uniform attention rows") {
    Rng rng(3);
    auto mem = random_memory<float>(rng, 2, 4);
    auto f = Tensor::zeros({5, 4});
    for (AttnNorm norm : {AttnNorm::Double, AttnNorm::SoftmaxK}) {
        auto att = attention_map(f, mem, norm);
        for (int64_t i = 0; i < att.rows(); ++i)
            for (int64_t j = 0; j < att.cols(); ++j)
                CHECK(att.at(i, j) == doctest::Approx(0.5).epsilon(1e-6));
    }

    // width mismatch is a dimension error
    auto bad = Tensor::zeros({5, 3});
    CHECK_THROWS_AS(attention_map(bad, mem, AttnNorm::Double), DimensionError);
}

TEST_CASE("attention maps are row-stochastic under both norms") {
    Rng rng(4);
    for (AttnNorm norm : {AttnNorm::Double, AttnNorm::SoftmaxK}) {
        for (int trial = 0; trial < 20; ++trial) {
            auto mem = random_memory<float>(rng, 6, 8);
            auto f = testutil::random_matrix<float>(rng, 9, 8, 2.0);
            auto att = attention_map(f, mem, norm);
            for (int64_t i = 0; i < att.rows(); ++i) {
                float s = 0;
                for (int64_t j = 0; j < att.cols(); ++j) {
                    CHECK(att.at(i, j) >= 0.0f);
                    s += att.at(i, j);
                }
                CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("memorized attention matches the dense oracle on small instances") {
    Rng rng(6);
    for (AttnNorm norm : {AttnNorm::Double, AttnNorm::SoftmaxK}) {
        for (int trial = 0; trial < 10; ++trial) {
            int64_t n = 3, k = 2, d = 2;
            auto mem = random_memory<double>(rng, k, d);
            auto f = testutil::random_matrix<double>(rng, n, d);
            auto out = memorized_attention(f, mem, norm);
            auto oracle = attention_oracle(f.data(), mem.key.value.data(), mem.value.value.data(), n,
                                           k, d, norm);
            for (size_t i = 0; i < oracle.size(); ++i)
                CHECK(out.data()[i] == doctest::Approx(oracle[i]).epsilon(1e-9));
        }
    }
}

TEST_CASE("full fusion stack matches the independent dense path on n <= 8") {
    ModelConfig cfg;
    cfg.d1 = 4;
    cfg.d2 = 4;
    cfg.df = 4;
    cfg.db = 3;
    cfg.enc2d_hidden = 3;
    cfg.memory_len = 3;
    cfg.class_count = 3;
    auto model = FullModelT<double>::make(cfg, 77);
    model.training = false; // frozen unit statistics for the oracle
    Rng rng(8);
    auto f2d = testutil::random_matrix<double>(rng, 8, 4);
    auto f3d = testutil::random_matrix<double>(rng, 8, 4);
    auto refined = model.refine_fusion(f2d, f3d);

    // oracle: attention stages, adapter, fusion attention, phi2 in plain loops
    auto a2 = attention_oracle(f2d.data(), model.mem2d.key.value.data(),
                               model.mem2d.value.value.data(), 8, 3, 4, cfg.attn_norm);
    auto a3 = attention_oracle(f3d.data(), model.mem3d.key.value.data(),
                               model.mem3d.value.value.data(), 8, 3, 4, cfg.attn_norm);
    std::vector<double> cat(8 * 8);
    for (int64_t i = 0; i < 8; ++i) {
        for (int64_t j = 0; j < 4; ++j) {
            cat[static_cast<size_t>(i * 8 + j)] = a2[static_cast<size_t>(i * 4 + j)];
            cat[static_cast<size_t>(i * 8 + 4 + j)] = a3[static_cast<size_t>(i * 4 + j)];
        }
    }
    std::vector<double> fused(8 * 4, 0.0);
    for (int64_t i = 0; i < 8; ++i)
        for (int64_t o = 0; o < 4; ++o) {
            double acc = model.phi1.bias.value.data()[static_cast<size_t>(o)];
            for (int64_t k = 0; k < 8; ++k)
                acc += cat[static_cast<size_t>(i * 8 + k)] *
                       model.phi1.weight.value.data()[static_cast<size_t>(k * 4 + o)];
            fused[static_cast<size_t>(i * 4 + o)] = std::max(0.0, acc);
        }
    auto af = attention_oracle(fused, model.memf.key.value.data(), model.memf.value.value.data(), 8,
                               3, 4, cfg.attn_norm);
    for (int64_t i = 0; i < 8; ++i)
        for (int64_t o = 0; o < 4; ++o) {
            double acc = model.phi2.bias.value.data()[static_cast<size_t>(o)];
            for (int64_t k = 0; k < 4; ++k)
                acc += af[static_cast<size_t>(i * 4 + k)] *
                       model.phi2.weight.value.data()[static_cast<size_t>(k * 4 + o)];
            // eval-mode batchnorm against fresh running stats (mean 0, var 1)
            double normed = acc / std::sqrt(1.0 + 1e-5);
            normed = model.phi2_bn.gamma.value.data()[static_cast<size_t>(o)] * normed +
                     model.phi2_bn.beta.value.data()[static_cast<size_t>(o)];
            double expect = std::max(0.0, normed);
            CHECK(refined.at(i, o) == doctest::Approx(expect).epsilon(1e-5));
        }
}

TEST_CASE("fusion attention with zero memory and identity phi2 reduces to relu") {
    ModelConfig cfg;
    cfg.d1 = 4;
    cfg.d2 = 4;
    cfg.df = 4;
    cfg.db = 3;
    cfg.enc2d_hidden = 3;
    cfg.memory_len = 3;
    cfg.class_count = 3;
    auto model = FullModelT<float>::make(cfg, 12);
    model.training = false;
    // zero value memories, identity phi2 linear, unit-variance frozen stats
    for (auto& v : model.memf.value.value.data()) v = 0.0f;
    for (auto& v : model.phi2.weight.value.data()) v = 0.0f;
    for (int64_t i = 0; i < 4; ++i) model.phi2.weight.value.at(i, i) = 1.0f;
    for (auto& v : model.phi2.bias.value.data()) v = 0.0f;

    Rng rng(13);
    // feed a pre-activation directly through the fusion attention tail
    auto fus = testutil::random_matrix<float>(rng, 6, 4);
    auto attended = memorized_attention(fus, model.memf, cfg.attn_norm);
    CHECK(attended.data() == fus.data());
    auto lin = model.phi2.forward(attended);
    auto normed = batchnorm(lin, model.phi2_bn.gamma.value, model.phi2_bn.beta.value,
                            model.phi2_bn.running_mean, model.phi2_bn.running_var, false, false);
    auto out = relu(normed);
    for (int64_t i = 0; i < 6; ++i)
        for (int64_t j = 0; j < 4; ++j)
            CHECK(out.at(i, j) == doctest::Approx(std::max(0.0f, fus.at(i, j))).epsilon(1e-4));

    // training-mode batch of one is a contract error (statistics undefined)
    auto single = testutil::random_matrix<float>(rng, 1, 4);
    auto lin1 = model.phi2.forward(single);
    CHECK_THROWS_AS(batchnorm(lin1, model.phi2_bn.gamma.value, model.phi2_bn.beta.value,
                              model.phi2_bn.running_mean, model.phi2_bn.running_var, true, false),
                    ContractError);
}

TEST_CASE("all-equal fusion rows give all-equal output rows") {
    ModelConfig cfg;
    cfg.df = 4;
    cfg.memory_len = 3;
    auto model = FullModelT<float>::make(cfg, 14);
    model.training = false;
    std::vector<float> row = {0.3f, -0.2f, 0.9f, 0.1f};
    std::vector<float> data;
    for (int i = 0; i < 5; ++i) data.insert(data.end(), row.begin(), row.end());
    auto fus = Tensor::from_data({5, 4}, data);
    auto out = memorized_attention(fus, model.memf, cfg.attn_norm);
    for (int64_t i = 1; i < 5; ++i)
        for (int64_t j = 0; j < 4; ++j) CHECK(out.at(i, j) == doctest::Approx(out.at(0, j)));
}

TEST_CASE("fusion adapter block structure and gradients") {
    Rng rng(15);
    ModelConfig cfg;
    cfg.d1 = 3;
    cfg.d2 = 4;
    cfg.df = 5;
    auto model = FullModelT<double>::make(cfg, 16);

    // zero inputs and zero bias give zero output
    for (auto& v : model.phi1.bias.value.data()) v = 0.0;
    auto fused = relu(model.phi1.forward(concat_cols(TensorT<double>::zeros({4, 3}),
                                                     TensorT<double>::zeros({4, 4}))));
    for (double v : fused.data()) CHECK(v == 0.0);

    // weights selecting only the 2D block ignore the 3D refinement
    for (int64_t k = 3; k < 7; ++k)
        for (int64_t o = 0; o < 5; ++o) model.phi1.weight.value.at(k, o) = 0.0;
    auto f2d = testutil::random_matrix<double>(rng, 4, 3);
    auto out1 = relu(model.phi1.forward(concat_cols(f2d, testutil::random_matrix<double>(rng, 4, 4))));
    auto out2 = relu(model.phi1.forward(concat_cols(f2d, testutil::random_matrix<double>(rng, 4, 4))));
    CHECK(out1.data() == out2.data());

    // gradient check through the adapter
    auto model2 = FullModelT<double>::make(cfg, 17);
    auto fa = testutil::random_matrix<double>(rng, 4, 3, 1.0, true);
    auto fb = testutil::random_matrix<double>(rng, 4, 4, 1.0, true);
    auto fn = [&]() { return sum_all(softmax_rows(relu(model2.phi1.forward(concat_cols(fa, fb))))); };
    auto resample = [&](int k) {
        Rng r2(300 + static_cast<uint64_t>(k));
        for (auto& v : fa.data()) v = r2.normal();
        for (auto& v : fb.data()) v = r2.normal();
    };
    REQUIRE(probe_away_from_kinks(fn, resample));
    auto report = grad_check("fusion_adapter", fn, {&fa, &fb, &model2.phi1.weight.value}, 1e-4);
    CHECK(report.passed);
}

TEST_CASE("flop counter closed forms") {
    auto mem = count_flops("memorized", 100, 10, 8);
    CHECK(mem.flops_matmul == 32000);
    CHECK(mem.flops_norm == 7 * 100 * 10);
    CHECK(mem.flops == mem.flops_matmul + mem.flops_norm);

    auto dense = count_flops("dense_self", 100, 0, 8);
    CHECK(dense.flops_matmul == 320000);
    CHECK(dense.flops_norm == 5 * 100 * 100);

    // matmul-term ratio is N/K exactly
    CHECK(dense.flops_matmul / mem.flops_matmul == 100 / 10);
    CHECK(count_flops("dense_self", 2048, 0, 32).flops_matmul /
              count_flops("memorized", 2048, 16, 32).flops_matmul ==
          128);

    // doubling N doubles the memorized matmul count exactly
    CHECK(count_flops("memorized", 200, 10, 8).flops_matmul == 2 * mem.flops_matmul);

    CHECK_THROWS_AS(count_flops("memorized", 0, 10, 8), ParameterError);
    CHECK_THROWS_AS(count_flops("unknown", 10, 10, 8), ParameterError);
}
