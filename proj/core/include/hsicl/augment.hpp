#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hsicl/cube.hpp"
#include "hsicl/rng.hpp"

namespace hsicl::augment {

// Every operator maps a k x S x S volume to a volume of the same shape.
// Vacated or out-of-range samples are filled by edge replication.

// ---- spectral operators -------------------------------------------------

/// out(b) = in(b - delta), edge-replicated. |delta| < k.
Volume spectral_shift(const Volume& in, int delta);

/// Band b -> band k-1-b.
Volume spectral_flip(const Volume& in);

/// Isotropic Hapke reflectance with the two-stream H-function approximation.
double hapke_reflectance(double albedo, double mu0, double mu);
/// Inverts hapke_reflectance for the single-scattering albedo by bisection.
/// Returns std::nullopt when the reflectance is outside the reachable range.
std::optional<double> hapke_albedo(double reflectance, double mu0, double mu, double tol = 1e-10);

struct Geometry {
    double mu0 = 1.0;  // cosine of incidence
    double mu = 1.0;   // cosine of emission
};

/// Re-renders every reflectance from the nominal geometry under a new one.
/// Inputs are clamped to [1e-6, 0.999] before inversion.
Volume hapke_scatter(const Volume& in, Geometry nominal, Geometry target);

/// Smooth gain/offset curves over the band index, shared by all pixels.
struct GainOffset {
    struct Bump {
        double amplitude;
        double center;  // band index
        double width;   // bands
    };
    std::vector<Bump> gain_bumps;
    std::vector<Bump> offset_bumps;

    std::vector<double> gain(std::size_t bands) const;
    std::vector<double> offset(std::size_t bands) const;
};

GainOffset draw_gain_offset(std::size_t bands, double gain_amp, double offset_amp, int bumps, double width_frac,
                            Rng& rng);
/// x(b) -> g(b) x(b) + o(b).
Volume apply_gain_offset(const Volume& in, std::span<const double> gain, std::span<const double> offset);
Volume atmospheric_compensation(const Volume& in, double gain_amp, double offset_amp, int bumps, Rng& rng,
                                double width_frac = 0.15);

/// Gaussian-smoothed white noise rescaled so max |d| == amplitude.
std::vector<double> draw_spectral_displacement(std::size_t bands, double amplitude, double smoothness, Rng& rng);
/// Resamples every spectrum at b + d(b) with linear interpolation.
Volume resample_spectra(const Volume& in, std::span<const double> displacement);
Volume spectral_elastic(const Volume& in, double amplitude, double smoothness, Rng& rng);

/// Zeroes round(fraction * k) distinct bands chosen uniformly.
Volume band_erasure(const Volume& in, double fraction, Rng& rng, std::vector<std::size_t>* erased = nullptr);

/// out band b = in band perm[b], the same permutation at every pixel.
Volume permute_bands(const Volume& in, std::span<const std::size_t> perm);
Volume band_permutation(const Volume& in, Rng& rng, std::vector<std::size_t>* perm = nullptr);

/// x <- (1 - lambda) x + lambda * mean(4-neighbours inside the patch).
/// A 1x1 patch has no neighbours; it is returned unchanged and
/// `no_neighbours` (when given) is set.
Volume nn_mixing(const Volume& in, double lambda, bool* no_neighbours = nullptr);

// ---- spatial operators ----------------------------------------------------

/// Counter-clockwise rotation by 90 degrees * quarter_turns (lossless).
Volume spatial_rotate(const Volume& in, int quarter_turns);
/// Bilinear rotation about the patch centre by an arbitrary angle.
Volume spatial_rotate_angle(const Volume& in, double radians);

struct DisplacementField {
    std::size_t rows = 0, cols = 0;
    std::vector<double> dy;  // row displacement per pixel
    std::vector<double> dx;  // column displacement per pixel
};

DisplacementField draw_displacement_field(std::size_t rows, std::size_t cols, double amplitude, double smoothness,
                                          Rng& rng);
/// out(b, r, c) = in(b, r + dy, c + dx), bilinear, coordinates clamped.
Volume apply_displacement(const Volume& in, const DisplacementField& field);
Volume spatial_elastic(const Volume& in, double amplitude, double smoothness, Rng& rng);

enum class Axis { Horizontal, Vertical };
/// Horizontal mirrors columns (left/right), vertical mirrors rows.
Volume spatial_flip(const Volume& in, Axis axis);

/// out(r, c) = in(r - dy, c - dx) with edge replication. |dx|, |dy| < S.
Volume spatial_translate(const Volume& in, int dx, int dy);

// ---- pipelines --------------------------------------------------------------

enum class OpKind {
    SpectralShift,
    SpectralFlip,
    Hapke,
    Atmospheric,
    SpectralElastic,
    BandErasure,
    BandPermutation,
    NnMixing,
    Rotate,
    SpatialElastic,
    SpatialFlip,
    Translate,
};

bool is_spectral(OpKind op) noexcept;
std::string_view op_name(OpKind op) noexcept;
/// Accepts the kebab-case names printed by op_name ("spectral-flip", ...).
OpKind parse_op(std::string_view name);
const std::vector<OpKind>& all_ops();

/// One operator plus its parameters. Parameters not listed take their
/// documented defaults (see describe_params).
struct AugmentSpec {
    OpKind op = OpKind::SpectralFlip;
    std::map<std::string, double> params;

    double param(const std::string& key) const;
    /// Throws ParameterError on unknown keys or out-of-range values.
    void validate() const;
};

struct ParamInfo {
    std::string name;
    double default_value;
    double min;
    double max;
    std::string meaning;
};
const std::vector<ParamInfo>& describe_params(OpKind op);

/// Applies one spec to a volume, drawing any random parameters from `rng`.
Volume apply_spec(const Volume& in, const AugmentSpec& spec, Rng& rng);

/// A stage applies one spec drawn uniformly from `choices` (one choice means
/// a fixed operator).
struct AugmentStage {
    std::vector<AugmentSpec> choices;
};

struct AugmentPipeline {
    std::vector<AugmentStage> stages;
    std::uint64_t master_seed = 0;

    bool empty() const noexcept { return stages.empty(); }
    void validate() const;

    static AugmentPipeline fixed(std::vector<AugmentSpec> specs, std::uint64_t seed);
};

/// Randomness for stage i of sample n is drawn from hash(master, n, i), so a
/// sample's augmentation does not depend on what else was augmented.
Rng stage_rng(std::uint64_t master_seed, std::uint64_t sample_index, std::size_t stage);

Patch apply_pipeline(const Patch& patch, const AugmentPipeline& pipeline, std::uint64_t sample_index);
Volume apply_pipeline(const Volume& in, const AugmentPipeline& pipeline, std::uint64_t sample_index);

}  // namespace hsicl::augment
