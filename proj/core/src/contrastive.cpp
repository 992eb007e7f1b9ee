#include "hsicl/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hsicl/error.hpp"

namespace hsicl {

void ContrastiveConfig::validate() const {
    if (!(temperature > 0.0)) throw ParameterError("contrastive: temperature must be positive");
    if (!(radius >= 0.0)) throw ParameterError("contrastive: radius must be non-negative");
    if (!(alpha >= 0.0)) throw ParameterError("contrastive: alpha must be non-negative");
}

bool PositiveSets::contains(std::size_t i, std::size_t j) const {
    const auto& m = members.at(i);
    return std::binary_search(m.begin(), m.end(), j);
}

std::vector<std::size_t> twin_pairs(std::size_t anchors) {
    std::vector<std::size_t> pair(2 * anchors);
    for (std::size_t i = 0; i < anchors; ++i) {
        pair[i] = i + anchors;
        pair[i + anchors] = i;
    }
    return pair;
}

PositiveSets build_positive_sets(const std::vector<LabelVector>& labels, const std::vector<std::size_t>& pair,
                                 double radius) {
    if (!(radius >= 0.0)) throw ParameterError("build_positive_sets: radius must be non-negative");
    const std::size_t n = labels.size();
    if (pair.size() != n) throw ShapeError("build_positive_sets: pair map length differs from label count");
    for (std::size_t i = 0; i < n; ++i)
        if (pair[i] >= n || pair[i] == i || pair[pair[i]] != i)
            throw ShapeError("build_positive_sets: pair map is not a perfect matching at view " + std::to_string(i));
    const double r2 = radius * radius;
    PositiveSets sets;
    sets.members.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            if (labels[j].dim() != labels[i].dim()) throw ShapeError("build_positive_sets: mixed label dimensions");
            double d2 = 0.0;
            for (std::size_t c = 0; c < labels[i].dim(); ++c) {
                const double diff = labels[i].values[c] - labels[j].values[c];
                d2 += diff * diff;
            }
            if (j == pair[i] || d2 <= r2) sets.members[i].push_back(j);
        }
    }
    return sets;
}

ad::Var contrastive_loss(const ad::Var& features, const PositiveSets& positives, const ContrastiveConfig& config,
                         std::size_t* skipped) {
    config.validate();
    if (features.shape().size() != 2) throw ShapeError("contrastive_loss: features must be [2N, d]");
    const std::size_t views = features.shape()[0];
    if (views % 2 != 0 || views == 0) throw ShapeError("contrastive_loss: need an even, non-zero number of views");
    if (positives.views() != views) throw ShapeError("contrastive_loss: positive sets do not match view count");

    const ad::Var z = ad::normalize_rows(features);
    const ad::Var sim = ad::matmul(z, ad::transpose_last(z));
    const double inv_tau = 1.0 / config.temperature;
    const double inv_n = 2.0 / static_cast<double>(views);

    // Per anchor: membership mask, denominator softmax weights, scaling.
    struct Anchor {
        bool active = false;
        double weight = 0.0;                  // (1/N) * w_i
        std::vector<double> denom_softmax;    // over all k, zero outside D_i
    };
    std::vector<Anchor> anchors(views);
    std::vector<char> in_ball(views);
    double loss = 0.0;
    std::size_t skip = 0;
    const auto& s = sim.value().data;
    for (std::size_t i = 0; i < views; ++i) {
        std::fill(in_ball.begin(), in_ball.end(), 0);
        for (std::size_t j : positives.members[i]) in_ball[j] = 1;
        const auto& ball = positives.members[i];
        double mx = -std::numeric_limits<double>::infinity();
        std::size_t denom_count = 0;
        for (std::size_t k = 0; k < views; ++k) {
            if (k == i || (in_ball[k] && !config.include_positives_in_denominator)) continue;
            mx = std::max(mx, s[i * views + k] * inv_tau);
            ++denom_count;
        }
        if (denom_count == 0 || ball.empty()) {
            ++skip;
            continue;
        }
        Anchor& a = anchors[i];
        a.active = true;
        a.denom_softmax.assign(views, 0.0);
        double z_sum = 0.0;
        for (std::size_t k = 0; k < views; ++k) {
            if (k == i || (in_ball[k] && !config.include_positives_in_denominator)) continue;
            a.denom_softmax[k] = std::exp(s[i * views + k] * inv_tau - mx);
            z_sum += a.denom_softmax[k];
        }
        for (auto& v : a.denom_softmax) v /= z_sum;
        const double lse = mx + std::log(z_sum);
        const double w = config.per_positive_norm ? 1.0 / static_cast<double>(ball.size()) : 1.0;
        a.weight = inv_n * w;
        double term = 0.0;
        for (std::size_t j : ball) term += lse - s[i * views + j] * inv_tau;
        loss += a.weight * term;
    }
    if (skipped) *skipped = skip;
    if (skip == views) throw DegenerateBatchError("contrastive_loss: no anchor has a negative in this batch");

    return ad::make_op(ad::Tensor({1}, {loss}), {sim},
                       [anchors = std::move(anchors), positives, views, inv_tau](ad::Node& self) {
                           const double g = self.grad.data[0];
                           auto& gs = self.parents[0]->grad_slot().data;
                           for (std::size_t i = 0; i < views; ++i) {
                               const Anchor& a = anchors[i];
                               if (!a.active) continue;
                               const auto& ball = positives.members[i];
                               const double c = g * a.weight * inv_tau;
                               const double nb = static_cast<double>(ball.size());
                               for (std::size_t j : ball) gs[i * views + j] -= c;
                               for (std::size_t k = 0; k < views; ++k)
                                   if (a.denom_softmax[k] != 0.0) gs[i * views + k] += c * nb * a.denom_softmax[k];
                           }
                       });
}

ad::Tensor label_matrix(const std::vector<LabelVector>& labels) {
    if (labels.empty()) throw ShapeError("label_matrix: no labels");
    const std::size_t s = labels.front().dim();
    ad::Tensor t({labels.size(), s});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i].dim() != s) throw ShapeError("label_matrix: mixed label dimensions");
        std::copy(labels[i].values.begin(), labels[i].values.end(), t.data.begin() + static_cast<long>(i * s));
    }
    return t;
}

ad::Var regression_loss(const ad::Var& predictions, const ad::Tensor& targets) {
    if (predictions.shape() != targets.shape || predictions.shape().size() != 2)
        throw ShapeError("regression_loss: predictions " + ad::shape_str(predictions.shape()) + " vs targets " +
                         ad::shape_str(targets.shape));
    const std::size_t batch = targets.shape[0];
    const auto& p = predictions.value().data;
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = p[i] - targets.data[i];
        acc += d * d;
    }
    const double inv_b = 1.0 / static_cast<double>(batch);
    return ad::make_op(ad::Tensor({1}, {acc * inv_b}), {predictions}, [targets, inv_b](ad::Node& self) {
        ad::Node& np = *self.parents[0];
        auto& g = np.grad_slot().data;
        const double g0 = self.grad.data[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += g0 * 2.0 * inv_b * (np.value.data[i] - targets.data[i]);
    });
}

ad::Var total_loss(const ad::Var& regression, const ad::Var& contrastive, double alpha) {
    if (!(alpha >= 0.0)) throw ParameterError("total_loss: alpha must be non-negative");
    return ad::add(regression, ad::scale(contrastive, alpha));
}

}  // namespace hsicl
