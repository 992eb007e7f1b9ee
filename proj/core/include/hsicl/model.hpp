#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hsicl/autodiff.hpp"
#include "hsicl/cube.hpp"

namespace hsicl {

struct ConvStage {
    std::size_t out_channels = 4;
    ad::Dims3 kernel{3, 3, 3};   // (bands, rows, cols)
    ad::Dims3 pool{2, 2, 2};
    ad::Dims3 padding{0, 1, 1};
};

/// A 3D-CNN family: conv -> ReLU -> max-pool stages, an optional
/// self-attention block over the spatial grid, then a dense layer to the
/// feature dimension. The regression head is dense -> ReLU -> dense.
struct BackboneConfig {
    std::size_t input_bands = 64;
    std::size_t patch_size = 8;
    std::vector<ConvStage> stages;
    std::size_t feature_dim = 64;
    std::size_t head_hidden = 32;
    std::size_t output_dim = 3;
    bool attention = false;
    std::size_t attention_dim = 16;
    bool projection_head = false;
    std::size_t projection_dim = 32;
    bool simplex_head = false;

    /// "small", "base" or "base+attention".
    static BackboneConfig preset(const std::string& name, std::size_t bands, std::size_t patch_size,
                                 std::size_t output_dim);

    /// Shape of the activations after every conv stage, [C, D, H, W].
    std::vector<ad::Shape> stage_shapes() const;
    std::size_t flattened_size() const;
    /// Throws ShapeError when an extent collapses below 1.
    void validate() const;
    std::string describe() const;
    std::uint64_t digest() const;
};

/// Ordered, uniquely named parameter tensors of the backbone and the head.
class ModelParams {
public:
    void add(const std::string& name, ad::Tensor init);
    const ad::Var& at(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t size() const noexcept { return entries_.size(); }
    const std::vector<std::pair<std::string, ad::Var>>& entries() const noexcept { return entries_; }

    void zero_grad();
    /// Deep copy (fresh nodes, no gradients).
    ModelParams clone() const;
    /// FNV-1a over names, shapes and value bits.
    std::uint64_t digest() const;
    std::size_t parameter_count() const;

private:
    std::vector<std::pair<std::string, ad::Var>> entries_;
    std::map<std::string, std::size_t> index_;
};

/// Glorot-uniform weights, zero biases.
ModelParams init_params(const BackboneConfig& config, std::uint64_t seed);

/// Packs patches as a [B, 1, k, S, S] constant tensor.
ad::Tensor pack_batch(const std::vector<const Volume*>& volumes);

/// [B, 1, k, S, S] -> features [B, d].
ad::Var forward_backbone(const ModelParams& params, const BackboneConfig& config, const ad::Var& input);
/// Returns the attention weights [B, T, T] of the last forward pass through
/// the attention block, for inspection.
ad::Tensor attention_weights(const ModelParams& params, const BackboneConfig& config, const ad::Var& input);

/// Features [B, d] -> predictions [B, s].
ad::Var forward_head(const ModelParams& params, const BackboneConfig& config, const ad::Var& features);

/// Optional projection applied to features before the contrastive loss.
ad::Var forward_projection(const ModelParams& params, const BackboneConfig& config, const ad::Var& features);

/// SGD with heavy-ball momentum: v <- m v + g, p <- p - lr v.
/// A positive `max_grad_norm` rescales the gradient of all parameters
/// together whenever its global L2 norm exceeds that value.
class Sgd {
public:
    Sgd(double lr, double momentum, double max_grad_norm = 0.0)
        : lr_(lr), momentum_(momentum), max_grad_norm_(max_grad_norm) {}

    /// Updates every parameter and clears its gradient. A non-finite gradient
    /// throws NumericalError naming the parameter, before anything is updated.
    void step(ModelParams& params);

    double lr() const noexcept { return lr_; }
    double momentum() const noexcept { return momentum_; }
    /// Global gradient norm seen by the most recent step, before clipping.
    double last_grad_norm() const noexcept { return last_grad_norm_; }

private:
    double lr_;
    double momentum_;
    double max_grad_norm_;
    double last_grad_norm_ = 0.0;
    std::map<std::string, std::vector<double>> velocity_;
};

}  // namespace hsicl
