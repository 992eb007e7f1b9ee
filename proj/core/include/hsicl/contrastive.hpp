#pragma once

#include <cstddef>
#include <limits>
#include <vector>

#include "hsicl/autodiff.hpp"
#include "hsicl/cube.hpp"

namespace hsicl {

struct ContrastiveConfig {
    double radius = 0.1;       // label-space l2 radius of the positive ball
    double temperature = 0.1;  // tau
    double alpha = 1.0;        // weight of the contrastive term in the total loss
    /// Divide each anchor's sum by |B^i|. Off means the literal 1/N scaling.
    bool per_positive_norm = false;
    /// Standard InfoNCE denominator (all k != i) instead of negatives only.
    bool include_positives_in_denominator = false;

    void validate() const;
};

/// B^i for every view: label neighbours within the radius plus the twin view.
struct PositiveSets {
    std::vector<std::vector<std::size_t>> members;

    std::size_t views() const noexcept { return members.size(); }
    bool contains(std::size_t i, std::size_t j) const;
};

/// Twin map for a batch laid out as [anchors..., augmented...]: i <-> i + N.
std::vector<std::size_t> twin_pairs(std::size_t anchors);

/// labels: one LabelVector per view. B^i = {j != i : |y_i - y_j| <= r} plus pair[i].
PositiveSets build_positive_sets(const std::vector<LabelVector>& labels, const std::vector<std::size_t>& pair,
                                 double radius);

/// Contrastive loss over 2N feature rows with cosine similarity:
///   L = -(1/N) sum_i sum_{j in B^i} log( exp(s_ij / tau) / sum_{k not in B^i, k != i} exp(s_ik / tau) ).
/// Anchors without negatives are skipped; if every anchor is skipped a
/// DegenerateBatchError is thrown. `skipped` receives the skip count.
ad::Var contrastive_loss(const ad::Var& features, const PositiveSets& positives, const ContrastiveConfig& config,
                         std::size_t* skipped = nullptr);

/// (1/B) sum_i |y_i - yhat_i|^2.
ad::Var regression_loss(const ad::Var& predictions, const ad::Tensor& targets);

/// reg + alpha * con.
ad::Var total_loss(const ad::Var& regression, const ad::Var& contrastive, double alpha);

/// Stacks label vectors into a [B, s] tensor.
ad::Tensor label_matrix(const std::vector<LabelVector>& labels);

}  // namespace hsicl
