#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "test_util.hpp"
#include "xfuse/pseudolabel.hpp"

using namespace xfuse;
namespace fs = std::filesystem;

namespace {

PseudoLabelSet make_set(std::vector<int32_t> y2d, std::vector<float> c2d) {
    PseudoLabelSet pl;
    pl.y2d_hat = y2d;
    pl.confidence_2d = c2d;
    pl.y3d_hat = std::vector<int32_t>(y2d.size(), -1);
    pl.confidence_3d = std::vector<float>(y2d.size(), 0.0f);
    return pl;
}

// sort-based oracle: survivors per class for distinct confidences
int64_t survivors_oracle(std::vector<float> confs, double keep) {
    std::sort(confs.begin(), confs.end(), std::greater<float>());
    size_t m = static_cast<size_t>(std::ceil(keep * static_cast<double>(confs.size())));
    m = std::min(std::max<size_t>(m, 1), confs.size());
    float threshold = confs[m - 1];
    int64_t kept = 0;
    for (float c : confs)
        if (c >= threshold) ++kept;
    return kept;
}

} // namespace

TEST_CASE("quantile filter keep-all and tie rules") {
    // keep_fraction = 1: nothing filtered
    auto full = filter_by_class_quantile({make_set({0, 0, 1, 1}, {0.9f, 0.1f, 0.5f, 0.4f})}, 2, 1.0);
    for (int32_t y : full[0].y2d_hat) CHECK(y >= 0);

    // all confidences equal within a class: ties kept, nothing filtered
    auto tied = filter_by_class_quantile({make_set({0, 0, 0, 0}, {0.7f, 0.7f, 0.7f, 0.7f})}, 2, 0.5);
    for (int32_t y : tied[0].y2d_hat) CHECK(y == 0);

    CHECK_THROWS_AS(filter_by_class_quantile({}, 2, 0.0), ParameterError);
    CHECK_THROWS_AS(filter_by_class_quantile({}, 2, 1.5), ParameterError);
}

TEST_CASE("quantile filter matches the sort-based oracle with distinct confidences") {
    Rng rng(41);
    for (double keep : {0.3, 0.5, 0.9}) {
        // distinct confidences spread over two classes and three scenes
        std::vector<PseudoLabelSet> sets;
        std::vector<std::vector<float>> conf_per_class(2);
        int stamp = 0;
        for (int s = 0; s < 3; ++s) {
            std::vector<int32_t> y;
            std::vector<float> c;
            for (int i = 0; i < 40; ++i) {
                int32_t cls = static_cast<int32_t>(rng.uniform_int(2));
                float conf = static_cast<float>(0.001 * (stamp++)) + 0.01f;
                y.push_back(cls);
                c.push_back(conf);
                conf_per_class[static_cast<size_t>(cls)].push_back(conf);
            }
            sets.push_back(make_set(y, c));
        }
        auto filtered = filter_by_class_quantile(sets, 2, keep);
        std::vector<int64_t> survivors(2, 0);
        for (const auto& pl : filtered)
            for (int32_t y : pl.y2d_hat)
                if (y >= 0) survivors[static_cast<size_t>(y)]++;
        for (int cls = 0; cls < 2; ++cls) {
            int64_t expect = survivors_oracle(conf_per_class[static_cast<size_t>(cls)], keep);
            int64_t ceil_rule = static_cast<int64_t>(
                std::ceil(keep * static_cast<double>(conf_per_class[static_cast<size_t>(cls)].size())));
            CHECK(survivors[static_cast<size_t>(cls)] == expect);
            CHECK(survivors[static_cast<size_t>(cls)] == ceil_rule); // distinct => exactly ceil
        }
    }
}

TEST_CASE("pseudo-label file round trip and corruption") {
    auto dir = testutil::fresh_temp_dir("xfpl");
    PseudoLabelSet pl = make_set({0, 1, -1, 2}, {0.9f, 0.8f, 0.7f, 0.6f});
    pl.y3d_hat = {2, -1, 1, 0};
    pl.confidence_3d = {0.5f, 0.4f, 0.3f, 0.2f};
    auto path = dir / "scene.xfpl";
    write_pseudo_labels(pl, path);
    auto loaded = read_pseudo_labels(path);
    CHECK(loaded.y2d_hat == pl.y2d_hat);
    CHECK(loaded.y3d_hat == pl.y3d_hat);
    CHECK(loaded.confidence_2d == pl.confidence_2d);
    CHECK(loaded.confidence_3d == pl.confidence_3d);

    CHECK(pseudo_label_path("scenes/tgt_train_3.xfus") == fs::path("scenes/tgt_train_3.xfpl"));

    std::ofstream bad(dir / "bad.xfpl", std::ios::binary);
    bad << "WRNG";
    bad.close();
    CHECK_THROWS_AS(read_pseudo_labels(dir / "bad.xfpl"), FormatError);
    fs::remove_all(dir);
}

TEST_CASE("xdpl weight semantics") {
    Rng rng(42);
    int64_t n = 4, c = 3;
    std::vector<float> unit(static_cast<size_t>(c), 1.0f);

    SUBCASE("exact agreement reduces to plain weighted cross-entropy") {
        auto logits = testutil::random_matrix<float>(rng, n, c);
        PredictionSetT<float> preds{logits, logits, logits, logits};
        PseudoLabelSet pl = make_set({0, 1, 2, 0}, {1, 1, 1, 1});
        pl.y3d_hat = {1, 2, 0, 1};
        auto loss = xdpl_loss(preds, pl, unit);
        auto expect = add(weighted_cross_entropy(logits, pl.y2d_hat, unit),
                          weighted_cross_entropy(logits, pl.y3d_hat, unit));
        CHECK(loss.item() == doctest::Approx(expect.item()).epsilon(1e-6));
    }

    SUBCASE("a point with KL = ln 2 is weighted by one half") {
        // construct per-point KL = ln 2 for the (p3d, p2d_m) pair at point 0:
        // p3d row = (1,0) one-hot-ish, p2d_m uniform over 2 classes
        auto p3d = Tensor::from_data({1, 2}, {80.0f, 0.0f});
        auto p2dm = Tensor::zeros({1, 2});
        auto p2d = Tensor::from_data({1, 2}, {1.0f, -1.0f}, true);
        PredictionSetT<float> preds{p2d, p2dm, p3d, Tensor::from_data({1, 2}, {80.0f, 0.0f})};
        PseudoLabelSet pl;
        pl.y2d_hat = {0};
        pl.y3d_hat = {-1};
        pl.confidence_2d = {1.0f};
        pl.confidence_3d = {0.0f};
        std::vector<float> w2(2, 1.0f);
        auto loss = xdpl_loss(preds, pl, w2);
        auto plain = weighted_cross_entropy(p2d, pl.y2d_hat, w2);
        CHECK(loss.item() == doctest::Approx(0.5 * plain.item()).epsilon(1e-4));
    }

    SUBCASE("random instance matches a scalar double-precision oracle") {
        auto p2d = testutil::random_matrix<double>(rng, n, c);
        auto p2dm = testutil::random_matrix<double>(rng, n, c);
        auto p3d = testutil::random_matrix<double>(rng, n, c);
        auto p3dm = testutil::random_matrix<double>(rng, n, c);
        PredictionSetT<double> preds{p2d, p2dm, p3d, p3dm};
        PseudoLabelSet pl = make_set({0, -1, 2, 1}, {1, 1, 1, 1});
        pl.y3d_hat = {2, 1, -1, 0};
        std::vector<double> w = {1.0, 2.0, 0.5};
        double loss = xdpl_loss(preds, pl, w).item();

        auto softmax_row = [&](const TensorT<double>& m, int64_t i) {
            std::vector<double> row(static_cast<size_t>(c));
            double mx = m.at(i, 0);
            for (int64_t j = 0; j < c; ++j) mx = std::max(mx, m.at(i, j));
            double s = 0;
            for (int64_t j = 0; j < c; ++j) {
                row[static_cast<size_t>(j)] = std::exp(m.at(i, j) - mx);
                s += row[static_cast<size_t>(j)];
            }
            for (auto& v : row) v /= s;
            return row;
        };
        auto term = [&](const TensorT<double>& main, const std::vector<int32_t>& labels,
                        const TensorT<double>& vp, const TensorT<double>& vq) {
            double acc = 0;
            int64_t kept = 0;
            for (int64_t i = 0; i < n; ++i)
                if (labels[static_cast<size_t>(i)] >= 0) ++kept;
            for (int64_t i = 0; i < n; ++i) {
                int32_t y = labels[static_cast<size_t>(i)];
                if (y < 0) continue;
                auto p = softmax_row(vp, i);
                auto q = softmax_row(vq, i);
                double kl = 0;
                for (int64_t j = 0; j < c; ++j) kl += p[static_cast<size_t>(j)] *
                                                      std::log(p[static_cast<size_t>(j)] / q[static_cast<size_t>(j)]);
                auto probs = softmax_row(main, i);
                double ce = -w[static_cast<size_t>(y)] * std::log(probs[static_cast<size_t>(y)]);
                acc += std::exp(-kl) * ce;
            }
            return acc / static_cast<double>(kept);
        };
        double expect = term(p2d, pl.y2d_hat, p3d, p2dm) + term(p3d, pl.y3d_hat, p2d, p3dm);
        CHECK(loss == doctest::Approx(expect).epsilon(1e-6));
    }

    SUBCASE("filtered points contribute nothing to value or gradient") {
        auto p2d = testutil::random_matrix<float>(rng, n, c, 1.0, true);
        auto other = testutil::random_matrix<float>(rng, n, c);
        PredictionSetT<float> preds{p2d, other, other, other};
        PseudoLabelSet pl = make_set({0, -1, -1, -1}, {1, 1, 1, 1});
        pl.y3d_hat = {-1, -1, -1, -1};
        auto loss = xdpl_loss(preds, pl, unit);
        backward(loss);
        REQUIRE(p2d.has_grad());
        for (int64_t j = 0; j < c; ++j) {
            CHECK(p2d.grad()[static_cast<size_t>(c + j)] == 0.0f);
            CHECK(p2d.grad()[static_cast<size_t>(2 * c + j)] == 0.0f);
            CHECK(p2d.grad()[static_cast<size_t>(3 * c + j)] == 0.0f);
        }

        PseudoLabelSet empty = make_set({-1, -1, -1, -1}, {1, 1, 1, 1});
        empty.y3d_hat = {-1, -1, -1, -1};
        CHECK(xdpl_loss(preds, empty, unit).item() == 0.0f);
    }

    SUBCASE("weights lie in (0,1] and decrease strictly with disagreement") {
        // sweep the mimic head away from the main head and watch one point's
        // contribution fall
        std::vector<double> last;
        for (double delta : {0.0, 0.5, 1.0, 2.0, 4.0}) {
            auto p2d = TensorT<double>::from_data({1, 2}, {0.4, -0.1}, true);
            auto p3d = TensorT<double>::from_data({1, 2}, {1.2, 0.0});
            auto p2dm = TensorT<double>::from_data({1, 2}, {1.2 - delta, 0.0 + delta});
            auto p3dm = TensorT<double>::from_data({1, 2}, {0.0, 0.0});
            PredictionSetT<double> preds{p2d, p2dm, p3d, p3dm};
            PseudoLabelSet pl;
            pl.y2d_hat = {0};
            pl.y3d_hat = {-1};
            pl.confidence_2d = {1};
            pl.confidence_3d = {0};
            double loss = xdpl_loss(preds, pl, std::vector<double>{1.0, 1.0}).item();
            if (!last.empty()) CHECK(loss < last.back());
            last.push_back(loss);
        }
    }

    SUBCASE("batch granularity and uniform weighting switches") {
        auto p2d = testutil::random_matrix<float>(rng, n, c, 1.0, true);
        auto p2dm = testutil::random_matrix<float>(rng, n, c);
        auto p3d = testutil::random_matrix<float>(rng, n, c);
        auto p3dm = testutil::random_matrix<float>(rng, n, c);
        PredictionSetT<float> preds{p2d, p2dm, p3d, p3dm};
        PseudoLabelSet pl = make_set({0, 1, 2, 0}, {1, 1, 1, 1});
        pl.y3d_hat = {1, 0, 2, 1};

        auto uniform = xdpl_loss(preds, pl, unit, XdplGranularity::Point, true);
        auto plain = add(weighted_cross_entropy(p2d, pl.y2d_hat, unit),
                         weighted_cross_entropy(p3d, pl.y3d_hat, unit));
        CHECK(uniform.item() == doctest::Approx(plain.item()).epsilon(1e-6));

        auto batch = xdpl_loss(preds, pl, unit, XdplGranularity::Batch, false);
        NoGradGuard ng;
        float w1 = std::exp(-kl_divergence(softmax_rows(p3d), softmax_rows(p2dm.detach())).item());
        float w2 = std::exp(-kl_divergence(softmax_rows(p2d.detach()), softmax_rows(p3dm)).item());
        float expect = w1 * weighted_cross_entropy(p2d.detach(), pl.y2d_hat, unit).item() +
                       w2 * weighted_cross_entropy(p3d, pl.y3d_hat, unit).item();
        CHECK(batch.item() == doctest::Approx(expect).epsilon(1e-5));
    }
}

TEST_CASE("xdpl weight is detached from the gradient path") {
    Rng rng(43);
    auto p2d = testutil::random_matrix<float>(rng, 3, 2, 1.0, true);
    auto p2dm = testutil::random_matrix<float>(rng, 3, 2, 1.0, true);
    auto p3d = testutil::random_matrix<float>(rng, 3, 2, 1.0, true);
    auto p3dm = testutil::random_matrix<float>(rng, 3, 2, 1.0, true);
    PredictionSetT<float> preds{p2d, p2dm, p3d, p3dm};
    PseudoLabelSet pl = make_set({0, 1, 0}, {1, 1, 1});
    pl.y3d_hat = {1, 0, 1};
    auto loss = xdpl_loss(preds, pl, std::vector<float>{1.0f, 1.0f});
    backward(loss);
    // only the supervised logits receive gradient; the variance pair does not
    CHECK(p2d.has_grad());
    CHECK(p3d.has_grad());
    CHECK_FALSE(p2dm.has_grad());
    CHECK_FALSE(p3dm.has_grad());
}
