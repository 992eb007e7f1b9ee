#include <benchmark/benchmark.h>

#include "hsicl/augment.hpp"
#include "hsicl/autodiff.hpp"
#include "hsicl/contrastive.hpp"
#include "hsicl/model.hpp"
#include "hsicl/rng.hpp"
#include "hsicl/synth.hpp"
#include "hsicl/train.hpp"

namespace {

using namespace hsicl;

std::vector<Volume> random_patches(std::size_t n, std::size_t k, std::size_t s, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Volume> out;
    for (std::size_t i = 0; i < n; ++i) {
        Volume v(k, s, s);
        for (auto& x : v.data) x = uniform(rng, 0.05, 0.95);
        out.push_back(std::move(v));
    }
    return out;
}

ad::Tensor pack(const std::vector<Volume>& vs) {
    std::vector<const Volume*> ptrs;
    for (const auto& v : vs) ptrs.push_back(&v);
    return pack_batch(ptrs);
}

void BM_Conv3dForward(benchmark::State& state) {
    const auto batch = static_cast<std::size_t>(state.range(0));
    const auto patches = random_patches(batch, 64, 8, 1);
    const ad::Var x = ad::constant(pack(patches));
    Rng rng(2);
    ad::Tensor w({4, 1, 5, 3, 3});
    for (auto& v : w.data) v = uniform(rng, -0.3, 0.3);
    const ad::Var wv = ad::parameter(w), bv = ad::parameter(ad::Tensor({4}));
    for (auto _ : state) {
        ad::NoGradGuard guard;
        benchmark::DoNotOptimize(ad::conv3d(x, wv, bv, {0, 1, 1}).value().data.data());
    }
}
BENCHMARK(BM_Conv3dForward)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_BackboneStep(benchmark::State& state) {
    const auto batch = static_cast<std::size_t>(state.range(0));
    const auto patches = random_patches(batch, 64, 8, 3);
    const BackboneConfig cfg = BackboneConfig::preset("base", 64, 8, 3);
    ModelParams params = init_params(cfg, 4);
    const ad::Var x = ad::constant(pack(patches));
    ad::Tensor targets({batch, 3}, 1.0 / 3.0);
    for (auto _ : state) {
        const ad::Var f = forward_backbone(params, cfg, x);
        const ad::Var loss = regression_loss(forward_head(params, cfg, f), targets);
        ad::backward(loss);
        params.zero_grad();
    }
}
BENCHMARK(BM_BackboneStep)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_ContrastiveLoss(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(5);
    ad::Tensor feats({2 * n, 64});
    for (auto& v : feats.data) v = uniform(rng, -1.0, 1.0);
    std::vector<LabelVector> labels;
    for (std::size_t i = 0; i < n; ++i) labels.push_back({{uniform(rng, 0.0, 1.0)}});
    for (std::size_t i = 0; i < n; ++i) labels.push_back(labels[i]);
    const PositiveSets pos = build_positive_sets(labels, twin_pairs(n), 0.05);
    const ContrastiveConfig cfg;
    for (auto _ : state) {
        const ad::Var f = ad::parameter(feats);
        ad::backward(contrastive_loss(f, pos, cfg));
        benchmark::DoNotOptimize(f.grad().data.data());
    }
}
BENCHMARK(BM_ContrastiveLoss)->Arg(64)->Arg(128)->Unit(benchmark::kMicrosecond);

void BM_AugmentOp(benchmark::State& state) {
    const auto op = augment::all_ops()[static_cast<std::size_t>(state.range(0))];
    const auto patch = random_patches(1, 64, 8, 6).front();
    augment::AugmentSpec spec{op, {}};
    Rng rng(7);
    state.SetLabel(std::string(augment::op_name(op)));
    for (auto _ : state) benchmark::DoNotOptimize(augment::apply_spec(patch, spec, rng).data.data());
}
BENCHMARK(BM_AugmentOp)->DenseRange(0, 11)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
