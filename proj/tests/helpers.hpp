#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "hsicl/autodiff.hpp"
#include "hsicl/contrastive.hpp"
#include "hsicl/cube.hpp"
#include "hsicl/rng.hpp"

namespace testutil {

using namespace hsicl;
using namespace hsicl::ad;

/// Volume filled with uniform values in [lo, hi).
inline Volume random_volume(std::size_t k, std::size_t h, std::size_t w, std::uint64_t seed, double lo = 0.05,
                            double hi = 0.95) {
    Volume v(k, h, w);
    Rng rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& x : v.data) x = dist(rng);
    return v;
}

// ---- autodiff -------------------------------------------------------------------

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    Rng rng(seed);
    for (auto& x : t.data) x = uniform(rng, lo, hi);
    return t;
}

// Contracts a tensor-valued op to a scalar with fixed random weights, so the
// check exercises every output entry.
inline Var weighted_sum(const Var& y, std::uint64_t seed) {
    return sum(mul(y, constant(random_tensor(y.shape(), seed))));
}

struct FdReport {
    double worst = 0.0;
    std::size_t checked = 0;
    // Location and values of the worst entry, for failure messages.
    std::size_t input = 0, index = 0;
    double analytic = 0.0, numeric = 0.0;
};

/// Central differences with step h against the analytic gradient of every
/// entry of every input. With h = 1e-5 and O(1) losses the difference
/// quotient carries ~1e-11 of round-off, so gradients that are exactly zero
/// (the key bias under softmax, for one) need an absolute floor.
inline FdReport finite_difference(const std::vector<Var>& inputs, const std::function<Var()>& loss,
                                  double h = 1e-5, double floor = 1e-6) {
    for (auto v : inputs) v.zero_grad();
    backward(loss());
    FdReport rep;
    for (std::size_t n = 0; n < inputs.size(); ++n) {
        Var v = inputs[n];
        const Tensor analytic = v.grad();
        auto& values = v.node()->value.data;
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double keep = values[i];
            values[i] = keep + h;
            double up;
            double down;
            {
                NoGradGuard guard;
                up = loss().item();
                values[i] = keep - h;
                down = loss().item();
            }
            values[i] = keep;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic.data[i];
            const double scale = std::max({std::abs(a), std::abs(numeric), floor});
            const double err = std::abs(a - numeric) / scale;
            if (err > rep.worst) rep = {err, rep.checked, n, i, a, numeric};
            ++rep.checked;
        }
    }
    return rep;
}

// ---- contrastive ----------------------------------------------------------------

inline Tensor random_features(std::size_t rows, std::size_t d, std::uint64_t seed) {
    Tensor t({rows, d});
    Rng rng(seed);
    for (auto& x : t.data) x = uniform(rng, -1.0, 1.0);
    return t;
}

inline std::vector<LabelVector> random_labels(std::size_t anchors, std::size_t dim, double spread,
                                              std::uint64_t seed) {
    Rng rng(seed);
    std::vector<LabelVector> out(2 * anchors);
    for (std::size_t i = 0; i < anchors; ++i) {
        for (std::size_t j = 0; j < dim; ++j) out[i].values.push_back(uniform(rng, 0.0, spread));
        out[i + anchors] = out[i];
    }
    return out;
}

/// Direct double loop over anchors, positives and negatives.
inline double oracle_loss(const Tensor& f, const PositiveSets& sets, const ContrastiveConfig& cfg) {
    const std::size_t n2 = f.dim(0), d = f.dim(1);
    auto sim = [&](std::size_t i, std::size_t j) {
        double dot = 0, ni = 0, nj = 0;
        for (std::size_t k = 0; k < d; ++k) {
            dot += f.data[i * d + k] * f.data[j * d + k];
            ni += f.data[i * d + k] * f.data[i * d + k];
            nj += f.data[j * d + k] * f.data[j * d + k];
        }
        return dot / std::sqrt(ni * nj);
    };
    double total = 0.0;
    for (std::size_t i = 0; i < n2; ++i) {
        double denom = 0.0;
        bool any_negative = false;
        for (std::size_t k = 0; k < n2; ++k) {
            if (k == i) continue;
            const bool pos = sets.contains(i, k);
            if (!pos) any_negative = true;
            if (!pos || cfg.include_positives_in_denominator) denom += std::exp(sim(i, k) / cfg.temperature);
        }
        // The standard denominator still has terms when every view is positive.
        if (!any_negative && !cfg.include_positives_in_denominator) continue;
        double anchor = 0.0;
        for (std::size_t j : sets.members[i]) anchor -= sim(i, j) / cfg.temperature - std::log(denom);
        if (cfg.per_positive_norm) anchor /= static_cast<double>(sets.members[i].size());
        total += anchor;
    }
    return total / static_cast<double>(n2 / 2);
}

}  // namespace testutil
