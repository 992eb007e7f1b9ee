#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace hsicl {

/// Dense band-major volume (band, row, col). Each band image is contiguous,
/// which is what the spectral and spatial operators iterate over.
struct Volume {
    std::size_t bands = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Volume() = default;
    Volume(std::size_t k, std::size_t h, std::size_t w, double fill = 0.0)
        : bands(k), rows(h), cols(w), data(k * h * w, fill) {}

    std::size_t pixels() const noexcept { return rows * cols; }
    std::size_t size() const noexcept { return data.size(); }
    bool same_shape(const Volume& o) const noexcept {
        return bands == o.bands && rows == o.rows && cols == o.cols;
    }

    double& operator()(std::size_t b, std::size_t r, std::size_t c) noexcept {
        return data[(b * rows + r) * cols + c];
    }
    double operator()(std::size_t b, std::size_t r, std::size_t c) const noexcept {
        return data[(b * rows + r) * cols + c];
    }

    std::span<double> band(std::size_t b) noexcept { return {data.data() + b * pixels(), pixels()}; }
    std::span<const double> band(std::size_t b) const noexcept {
        return {data.data() + b * pixels(), pixels()};
    }

    /// Spectrum of one pixel (gathered, strided in memory).
    std::vector<double> spectrum(std::size_t r, std::size_t c) const;

    bool operator==(const Volume&) const = default;
};

/// A k x H x W reflectance cube with optional wavelength axis (micrometers).
class HyperCube {
public:
    HyperCube() = default;
    HyperCube(Volume data, std::vector<double> wavelengths = {}, std::string name = {});

    const Volume& data() const noexcept { return data_; }
    Volume& mutable_data() noexcept { return data_; }
    const std::vector<double>& wavelengths() const noexcept { return wavelengths_; }
    const std::string& name() const noexcept { return name_; }

    std::size_t bands() const noexcept { return data_.bands; }
    std::size_t rows() const noexcept { return data_.rows; }
    std::size_t cols() const noexcept { return data_.cols; }

    /// Throws DimensionError / NumericalError when an invariant is broken.
    void validate() const;

    bool operator==(const HyperCube&) const = default;

private:
    Volume data_;
    std::vector<double> wavelengths_;
    std::string name_;
};

/// Regression target for one sample. For unmixing these are abundances.
struct LabelVector {
    std::vector<double> values;

    std::size_t dim() const noexcept { return values.size(); }
    bool is_finite() const noexcept;
    /// Non-negative entries summing to 1 within `tol`.
    bool is_abundance(double tol = 1e-6) const noexcept;

    bool operator==(const LabelVector&) const = default;
};

/// Per-pixel labels over an H x W grid, stored like a volume with `dim`
/// planes. An abundance field is a LabelField whose pixels live on the simplex.
struct LabelField {
    Volume planes;

    LabelField() = default;
    LabelField(std::size_t dim, std::size_t rows, std::size_t cols) : planes(dim, rows, cols) {}
    explicit LabelField(Volume v) : planes(std::move(v)) {}

    std::size_t dim() const noexcept { return planes.bands; }
    std::size_t rows() const noexcept { return planes.rows; }
    std::size_t cols() const noexcept { return planes.cols; }

    LabelVector at(std::size_t r, std::size_t c) const;
    void set(std::size_t r, std::size_t c, const LabelVector& v);

    bool operator==(const LabelField&) const = default;
};

struct Patch {
    Volume data;
    std::size_t origin_row = 0;
    std::size_t origin_col = 0;
    LabelVector label;

    std::size_t size() const noexcept { return data.rows; }
    bool operator==(const Patch&) const = default;
};

struct PatchSet {
    std::vector<Patch> patches;
    std::string source_name;
    std::size_t stride = 0;

    std::size_t size() const noexcept { return patches.size(); }
    bool empty() const noexcept { return patches.empty(); }
    /// All patches share k, S and label dimension. Throws ShapeError otherwise.
    void validate() const;
};

/// Component-wise mean of a window of labels.
LabelVector patch_label(std::span<const LabelVector> window);

/// Mean label over the S x S window anchored at (row, col).
LabelVector patch_label(const LabelField& field, std::size_t row, std::size_t col, std::size_t size);

/// Tiles the cube with S x S windows at the given stride, top-left anchored,
/// row-major over origins.
PatchSet extract_patches(const HyperCube& cube, const LabelField& labels, std::size_t size, std::size_t stride);

/// Default stride used when none is configured: ceil(S / 2).
constexpr std::size_t default_stride(std::size_t size) noexcept { return (size + 1) / 2; }

}  // namespace hsicl
