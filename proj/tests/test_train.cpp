#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "hsicl/error.hpp"
#include "hsicl/train.hpp"

using namespace hsicl;

namespace {

/// Patches whose labels are a fixed linear map of the patch-mean spectrum.
PatchSet linear_toy_set(std::size_t count, std::uint64_t seed) {
    const std::size_t k = 6, s = 4;
    const double map[2][6] = {{0.5, -0.3, 0.2, 0.1, 0.0, 0.4}, {-0.2, 0.1, 0.6, -0.4, 0.3, 0.1}};
    PatchSet set;
    Rng rng(seed);
    for (std::size_t n = 0; n < count; ++n) {
        Patch p;
        p.data = Volume(k, s, s);
        std::vector<double> mean(k, 0.0);
        for (std::size_t b = 0; b < k; ++b) {
            const double level = uniform(rng, 0.2, 0.8);
            for (auto& x : p.data.band(b)) {
                x = level + uniform(rng, -0.05, 0.05);
                mean[b] += x / static_cast<double>(s * s);
            }
        }
        for (const auto& row : map) {
            double y = 0.0;
            for (std::size_t b = 0; b < k; ++b) y += row[b] * mean[b];
            p.label.values.push_back(y);
        }
        p.origin_row = n;
        set.patches.push_back(std::move(p));
    }
    return set;
}

BackboneConfig toy_model() {
    BackboneConfig m;
    m.input_bands = 6;
    m.patch_size = 4;
    m.stages = {ConvStage{8, {3, 1, 1}, {1, 2, 2}, {1, 0, 0}}};
    m.feature_dim = 8;
    m.head_hidden = 8;
    m.output_dim = 2;
    return m;
}

TrainConfig toy_config(std::size_t epochs, double lr) {
    TrainConfig c;
    c.arm = Arm::Baseline;
    c.contrastive.alpha = 0.0;
    c.epochs = epochs;
    c.lr = lr;
    c.batch_size = 16;
    return c;
}

double mse(const ad::Tensor& a, const ad::Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    return s / static_cast<double>(a.dim(0));
}

ad::Tensor labels_of(const PatchSet& set) {
    std::vector<LabelVector> l;
    for (const auto& p : set.patches) l.push_back(p.label);
    return label_matrix(l);
}

}  // namespace

TEST_CASE("split_dataset") {
    auto set = linear_toy_set(100, 1);
    auto [train, test] = split_dataset(set, 0.8, 7);
    CHECK(train.size() == 80);
    CHECK(test.size() == 20);

    auto [train2, test2] = split_dataset(set, 0.8, 7);
    CHECK(train.patches == train2.patches);
    CHECK(test.patches == test2.patches);

    std::multiset<std::size_t> seen;
    for (const auto& p : train.patches) seen.insert(p.origin_row);
    for (const auto& p : test.patches) seen.insert(p.origin_row);
    std::multiset<std::size_t> all;
    for (const auto& p : set.patches) all.insert(p.origin_row);
    CHECK(seen == all);

    CHECK_THROWS_AS(split_dataset(linear_toy_set(1, 1), 0.5, 1), DimensionError);
    CHECK_THROWS_AS(split_dataset(set, 1.0, 1), ParameterError);
}

TEST_CASE("metrics") {
    SUBCASE("r2") {
        ad::Tensor truth({3, 1}, {1.0, 2.0, 3.0});
        CHECK(r2_score(truth, truth) == 1.0);
        CHECK(r2_score(ad::Tensor({3, 1}, {2.0, 2.0, 2.0}), truth) == 0.0);
        CHECK(r2_score(ad::Tensor({3, 1}, {1.1, 1.9, 3.2}), truth) == doctest::Approx(0.97).epsilon(1e-12));
    }
    SUBCASE("constant truth components are skipped") {
        ad::Tensor truth({3, 2}, {1.0, 5.0, 2.0, 5.0, 3.0, 5.0});
        ad::Tensor pred({3, 2}, {1.1, 4.0, 1.9, 6.0, 3.2, 5.0});
        std::vector<std::size_t> skipped;
        CHECK(r2_score(pred, truth, &skipped) == doctest::Approx(0.97).epsilon(1e-12));
        CHECK(skipped == std::vector<std::size_t>{1});
        CHECK_THROWS_AS(r2_score(pred, ad::Tensor({3, 2}, std::vector<double>(6, 1.0))), UndefinedMetricError);
    }
    SUBCASE("r2 is invariant under a shared positive affine map") {
        auto a = testutil::random_volume(1, 20, 3, 4).data, b = testutil::random_volume(1, 20, 3, 5).data;
        ad::Tensor p({20, 3}, a), t({20, 3}, b);
        for (std::size_t i = 0; i < a.size(); ++i) {
            a[i] = 2.5 * a[i] - 7.0;
            b[i] = 2.5 * b[i] - 7.0;
        }
        CHECK(r2_score(ad::Tensor({20, 3}, a), ad::Tensor({20, 3}, b)) == doctest::Approx(r2_score(p, t)).epsilon(1e-12));
        CHECK(r2_score(p, t) <= 1.0);
    }
    SUBCASE("mae") {
        ad::Tensor x({2, 1}, {0.0, 1.0}), y({2, 1}, {1.0, 0.0});
        CHECK(mae(x, x) == 0.0);
        CHECK(mae(y, x) == 1.0);

        auto a = testutil::random_volume(1, 7, 3, 6).data, b = testutil::random_volume(1, 7, 3, 7).data;
        ad::Tensor p({7, 3}, a), t({7, 3}, b);
        double loop = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) loop += std::abs(a[i] - b[i]);
        CHECK(mae(p, t) == doctest::Approx(loop / 21.0).epsilon(1e-12));
        CHECK(mae(p, t) == mae(t, p));
        for (auto& v : a) v *= -3.0;
        for (auto& v : b) v *= -3.0;
        CHECK(mae(ad::Tensor({7, 3}, a), ad::Tensor({7, 3}, b)) == doctest::Approx(3.0 * mae(p, t)).epsilon(1e-12));
        CHECK_THROWS_AS(mae(p, ad::Tensor({3, 7})), ShapeError);
    }
    SUBCASE("mean and sample std") {
        const std::vector<double> one{0.4};
        CHECK(mean_std(one) == std::pair{0.4, 0.0});
        const std::vector<double> three{1.0, 2.0, 3.0};
        CHECK(mean_std(three).first == 2.0);
        CHECK(mean_std(three).second == doctest::Approx(1.0));
    }
}

TEST_CASE("regression-only training fits a linear toy problem") {
    auto data = linear_toy_set(64, 3);
    auto model = toy_model();
    auto cfg = toy_config(300, 0.05);
    auto result = train(cfg, Arm::Baseline, data, model, init_params(model, 1));
    const double final_mse = mse(predict(result.params, model, data), labels_of(data));
    CHECK(final_mse < 1e-3);
    REQUIRE(result.log.size() == 300);
    for (const auto& e : result.log) CHECK(std::isfinite(e.total));
}

TEST_CASE("full-batch training has a non-increasing moving average") {
    auto data = linear_toy_set(32, 3);
    auto model = toy_model();
    auto cfg = toy_config(200, 0.02);
    cfg.batch_size = 32;
    auto result = train(cfg, Arm::Baseline, data, model, init_params(model, 1));
    CHECK(loss_trend_non_increasing(result.log, 20));
    CHECK(result.log.back().total < result.log.front().total);

    auto rising = result.log;
    for (std::size_t i = 0; i < rising.size(); ++i) rising[i].total = static_cast<double>(i);
    CHECK_FALSE(loss_trend_non_increasing(rising, 20));
    rising[5].total = std::nan("");
    CHECK_FALSE(loss_trend_non_increasing(rising, 20));
}

TEST_CASE("training is deterministic and lr 0 changes nothing") {
    auto data = linear_toy_set(20, 4);
    auto model = toy_model();
    const auto init = init_params(model, 2);

    auto cfg = toy_config(3, 0.05);
    cfg.arm = Arm::SpectralSpatial;
    cfg.contrastive.alpha = 0.5;
    cfg.contrastive.radius = 0.05;
    auto a = train(cfg, cfg.arm, data, model, init);
    auto b = train(cfg, cfg.arm, data, model, init);
    CHECK(a.params.digest() == b.params.digest());
    CHECK(a.params.digest() != init.digest());
    CHECK(a.initial_digest == init.digest());

    auto frozen = toy_config(1, 0.0);
    auto c = train(frozen, Arm::Baseline, data, model, init);
    CHECK(c.params.digest() == init.digest());
    CHECK(c.log.size() == 1);
}

TEST_CASE("degenerate contrastive batches are skipped with a warning") {
    // All labels identical: every view is a positive of every other.
    auto data = linear_toy_set(8, 5);
    for (auto& p : data.patches) p.label.values = {0.3, 0.3};
    auto model = toy_model();
    auto cfg = toy_config(2, 0.01);
    cfg.arm = Arm::Spectral;
    cfg.contrastive.alpha = 1.0;
    auto result = train(cfg, cfg.arm, data, model, init_params(model, 1));
    CHECK(result.log.back().skipped_batches > 0);
    CHECK(result.log.back().batches == 0);
    CHECK_FALSE(result.warnings.empty());
    CHECK(result.warnings.front().find("epoch") != std::string::npos);
}

TEST_CASE("non-finite losses abort with the epoch and batch") {
    auto data = linear_toy_set(8, 6);
    data.patches[3].data.data[0] = std::nan("");
    auto model = toy_model();
    try {
        train(toy_config(1, 0.01), Arm::Baseline, data, model, init_params(model, 1));
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        const std::string msg = e.what();
        CAPTURE(msg);
        CHECK(msg.find("epoch") != std::string::npos);
        CHECK(msg.find("batch") != std::string::npos);
    }
}

TEST_CASE("pipelines per arm") {
    TrainConfig cfg;
    CHECK(make_pipeline(cfg, Arm::Baseline, 1).empty());
    CHECK(make_pipeline(cfg, Arm::Spectral, 1).stages.size() == 1);
    CHECK(make_pipeline(cfg, Arm::Spatial, 1).stages.size() == 1);
    auto both = make_pipeline(cfg, Arm::SpectralSpatial, 1);
    REQUIRE(both.stages.size() == 2);
    for (const auto& s : both.stages[0].choices) CHECK_FALSE(augment::is_spectral(s.op));
    for (const auto& s : both.stages[1].choices) CHECK(augment::is_spectral(s.op));
    for (Arm arm : kAllArms) CHECK(parse_arm(arm_name(arm)) == arm);
}

TEST_CASE("config validation") {
    TrainConfig c;
    c.batch_size = 1;
    CHECK_THROWS_AS(c.validate(), ParameterError);
    c = TrainConfig();
    c.split = 1.0;
    CHECK_THROWS_AS(c.validate(), ParameterError);
    c = TrainConfig();
    c.spectral_ops = {augment::AugmentSpec{augment::OpKind::Rotate, {}}};
    CHECK_THROWS_AS(c.validate(), ParameterError);
}

TEST_CASE("ablation report") {
    auto data = linear_toy_set(24, 8);
    // Rescale labels into the unit interval like abundances.
    for (auto& p : data.patches)
        for (auto& v : p.label.values) v = 0.5 + v;
    TrainConfig cfg = toy_config(2, 0.01);
    cfg.batch_size = 8;
    cfg.presets = {"small"};
    cfg.contrastive.alpha = 0.5;
    cfg.contrastive.radius = 0.02;
    // The toy patches are 6 x 4 x 4, too small for the presets' spectral
    // kernels, so widen them.
    for (auto& p : data.patches) {
        Volume wide(16, 8, 8);
        for (std::size_t b = 0; b < 16; ++b)
            for (std::size_t r = 0; r < 8; ++r)
                for (std::size_t c = 0; c < 8; ++c) wide(b, r, c) = p.data(b % 6, r % 4, c % 4);
        p.data = wide;
    }
    const std::vector<std::uint64_t> seeds{1, 2};
    auto report = ablate(cfg, data, seeds);
    CHECK(report.runs.size() == 8);

    // Every arm of a seed starts from the same weights.
    for (std::uint64_t seed : seeds) {
        std::set<std::uint64_t> digests;
        for (const auto& r : report.runs)
            if (r.seed == seed) digests.insert(r.initial_digest);
        CHECK(digests.size() == 1);
    }
    for (const auto& r : report.runs) {
        CHECK(r.r2 <= 1.0);
        CHECK(r.mae >= 0.0);
    }

    const auto text = serialize_report(report);
    const auto back = parse_report(text);
    CHECK(serialize_report(back) == text);
    CHECK(back.runs.size() == 8);

    const auto table = format_table(report);
    for (Arm arm : kAllArms) CHECK(table.find(std::string(arm_title(arm))) != std::string::npos);
    CHECK(table.find("R2") != std::string::npos);
    CHECK(table.find("MAE") != std::string::npos);

    // Repeating the ablation reproduces the report exactly.
    CHECK(serialize_report(ablate(cfg, data, seeds)) == text);

    // A single seed reports a zero spread.
    const std::vector<std::uint64_t> one{3};
    auto single = ablate(cfg, data, one);
    for (Arm arm : kAllArms) {
        CHECK(single.summary(arm, "small").r2_std == 0.0);
        CHECK(single.summary(arm, "small").mae_std == 0.0);
    }
}
