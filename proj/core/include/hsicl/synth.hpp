#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hsicl/cube.hpp"

namespace hsicl {

/// k x p matrix of endmember signatures, one material per column.
struct EndmemberMatrix {
    std::size_t bands = 0;
    std::size_t count = 0;
    std::vector<double> values;  // row-major: values[b * count + j]
    std::vector<std::string> names;
    std::vector<double> wavelengths;  // optional, length k

    double operator()(std::size_t b, std::size_t j) const noexcept { return values[b * count + j]; }
    double& operator()(std::size_t b, std::size_t j) noexcept { return values[b * count + j]; }
    std::vector<double> column(std::size_t j) const;

    bool operator==(const EndmemberMatrix&) const = default;
};

/// Endmembers built from 2-5 Gaussian bumps over the band index, min-max
/// scaled into [0.05, 0.95].
EndmemberMatrix synth_endmembers(std::size_t count, std::size_t bands, std::uint64_t seed);

/// Text format: header "k p" (or "k p +wl"), then k lines of p reflectances
/// (plus a trailing wavelength when flagged). Entries must lie in [0, 1].
EndmemberMatrix read_endmembers(std::istream& in);
EndmemberMatrix load_endmembers(const std::string& path);
void write_endmembers(std::ostream& out, const EndmemberMatrix& m);
void save_endmembers(const std::string& path, const EndmemberMatrix& m);

/// i.i.d. Dirichlet(concentration) abundance vector per pixel. Pixel streams
/// are derived from (seed, pixel index).
LabelField sample_abundances(std::size_t rows, std::size_t cols, std::span<const double> concentration,
                             std::uint64_t seed);

/// Polynomial post-nonlinear mixture Ma + (Ma) .* (Ma), without noise.
std::vector<double> pnmm_mix(const EndmemberMatrix& m, std::span<const double> abundances);

/// Adds flat zero-mean Gaussian noise calibrated so the whole-cube SNR equals
/// `snr_db`. std::nullopt means no noise (returns the input unchanged).
HyperCube add_noise_snr(const HyperCube& cube, std::optional<double> snr_db, std::uint64_t seed);

/// Multiplier of the 2D Gaussian modulation pattern at pixel (row, col).
double modulation_gain(std::size_t rows, std::size_t cols, std::size_t row, std::size_t col, double sigma,
                       double floor);

HyperCube gaussian_modulation(const HyperCube& cube, double sigma, double floor);

/// 10 log10(P_clean / P_(noisy - clean)).
double realized_snr_db(const HyperCube& clean, const HyperCube& noisy);

struct SynthConfig {
    std::size_t rows = 64;
    std::size_t cols = 64;
    std::size_t bands = 64;
    std::size_t endmembers = 3;
    std::vector<double> dirichlet_concentration;  // empty means all ones
    std::optional<double> snr_db = 20.0;
    double modulation_sigma = 16.0;
    double modulation_floor = 0.5;
    std::uint64_t seed = 1;
    std::string name = "synthetic";

    /// Paper-scale protocol: 100x100 pixels, 224 bands, 4 endmembers, 20 dB.
    static SynthConfig paper_scale();
    void validate() const;
};

struct Scene {
    HyperCube cube;   // noisy
    HyperCube clean;  // modulated, pre-noise
    LabelField abundances;
};

/// sample_abundances -> pnmm_mix per pixel -> gaussian_modulation -> add_noise_snr.
Scene generate_scene(const SynthConfig& config, const EndmemberMatrix& endmembers);

/// Evenly spaced wavelength axis (micrometers) used for synthetic scenes.
std::vector<double> default_wavelengths(std::size_t bands, double lo = 0.4, double hi = 2.5);

}  // namespace hsicl
