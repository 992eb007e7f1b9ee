#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hsicl/augment.hpp"
#include "hsicl/contrastive.hpp"
#include "hsicl/cube.hpp"
#include "hsicl/model.hpp"

namespace hsicl {

/// The four ablation arms: regression only, then contrastive training with
/// spectral, spatial, or spatial-then-spectral augmentation.
enum class Arm { Baseline, Spectral, Spatial, SpectralSpatial };

std::string_view arm_name(Arm arm) noexcept;    // "baseline", "spectral", ...
std::string_view arm_title(Arm arm) noexcept;   // "Baseline", "Spectral contrastive", ...
Arm parse_arm(std::string_view name);
constexpr Arm kAllArms[] = {Arm::Baseline, Arm::Spectral, Arm::Spatial, Arm::SpectralSpatial};

struct TrainConfig {
    std::size_t batch_size = 64;
    std::size_t epochs = 200;
    double lr = 0.01;
    double momentum = 0.9;
    /// Global gradient-norm ceiling per step; 0 disables clipping.
    double grad_clip = 1.0;
    std::uint64_t seed = 1;
    ContrastiveConfig contrastive;
    Arm arm = Arm::SpectralSpatial;
    double split = 0.8;
    std::vector<std::string> presets{"base"};
    bool simplex_head = false;
    bool projection_head = false;
    /// Apply the regression loss to augmented views too (with the anchor label).
    bool regress_augmented = true;
    /// Operators an arm draws from, with their parameters.
    std::vector<augment::AugmentSpec> spectral_ops;
    std::vector<augment::AugmentSpec> spatial_ops;

    TrainConfig();
    void validate() const;
};

/// Default spectral / spatial operator sets used by the ablation arms.
std::vector<augment::AugmentSpec> default_spectral_ops();
std::vector<augment::AugmentSpec> default_spatial_ops();

/// Pipeline for an arm: empty for Baseline, one stage drawing from the
/// enabled set otherwise, and spatial followed by spectral for the combined arm.
augment::AugmentPipeline make_pipeline(const TrainConfig& config, Arm arm, std::uint64_t master_seed);

/// Seeded shuffle then split into (train, test). Disjoint and exhaustive.
std::pair<PatchSet, PatchSet> split_dataset(const PatchSet& patches, double fraction, std::uint64_t seed);

struct EpochLog {
    std::size_t epoch = 0;
    double total = 0.0;
    double regression = 0.0;
    double contrastive = 0.0;
    std::size_t batches = 0;
    std::size_t skipped_batches = 0;
};

struct TrainResult {
    BackboneConfig model;
    ModelParams params;
    std::vector<EpochLog> log;
    std::uint64_t initial_digest = 0;
    std::vector<std::string> warnings;
};

/// Per-arm seed derivations shared by train() and ablate(): arms of one seed
/// see the same split and the same initial weights.
struct SeedStreams {
    std::uint64_t split, init, shuffle, augment;
    static SeedStreams from(std::uint64_t seed);
};

BackboneConfig model_for(const TrainConfig& config, const std::string& preset, const PatchSet& data);

/// Joint regression + contrastive training with SGD. Deterministic for a
/// fixed config, arm, data and initial parameters.
TrainResult train(const TrainConfig& config, Arm arm, const PatchSet& train_set, const BackboneConfig& model,
                  const ModelParams& initial);
/// Convenience: preset from config.presets.front(), init from config.seed.
TrainResult train(const TrainConfig& config, const PatchSet& train_set);

/// Predictions [B, s] for every patch, computed without recording a graph.
ad::Tensor predict(const ModelParams& params, const BackboneConfig& model, const PatchSet& patches,
                   std::size_t chunk = 64);

/// Uniform mean over components of 1 - SS_res / SS_tot. Components with
/// constant truth are skipped and flagged in `skipped` (if given).
double r2_score(const ad::Tensor& predictions, const ad::Tensor& truth, std::vector<std::size_t>* skipped = nullptr);
/// Mean absolute error over all entries.
double mae(const ad::Tensor& predictions, const ad::Tensor& truth);

/// True when every window-average of the total loss is <= the previous one.
bool loss_trend_non_increasing(const std::vector<EpochLog>& log, std::size_t window = 20);

struct RunRecord {
    Arm arm = Arm::Baseline;
    std::string preset;
    std::uint64_t seed = 0;
    double r2 = 0.0;
    double mae = 0.0;
    std::uint64_t initial_digest = 0;
    std::uint64_t final_digest = 0;
    double final_loss = 0.0;
};

struct ArmSummary {
    double r2_mean = 0.0, r2_std = 0.0;
    double mae_mean = 0.0, mae_std = 0.0;
};

struct MetricsReport {
    std::vector<std::string> presets;
    std::vector<std::uint64_t> seeds;
    std::vector<Arm> arms;
    std::vector<RunRecord> runs;
    std::uint64_t config_digest = 0;
    double runtime_seconds = 0.0;  // not part of the serialized report

    ArmSummary summary(Arm arm, const std::string& preset) const;
};

/// Mean and sample standard deviation (0 for a single value).
std::pair<double, double> mean_std(std::span<const double> values);

using ProgressFn = std::function<void(const RunRecord&)>;

/// Trains every arm for every preset and seed and evaluates on the held-out split.
MetricsReport ablate(const TrainConfig& config, const PatchSet& dataset, std::span<const std::uint64_t> seeds,
                     std::span<const Arm> arms = kAllArms, const ProgressFn& progress = {});

/// key = value document; see README for the schema.
std::string serialize_report(const MetricsReport& report);
MetricsReport parse_report(const std::string& text);
/// Arms as rows, presets as columns, one block for R2 and one for MAE.
std::string format_table(const MetricsReport& report);

}  // namespace hsicl
