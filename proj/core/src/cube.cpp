#include "hsicl/cube.hpp"

#include <cmath>
#include <string>

#include "hsicl/error.hpp"

namespace hsicl {

std::vector<double> Volume::spectrum(std::size_t r, std::size_t c) const {
    std::vector<double> out(bands);
    for (std::size_t b = 0; b < bands; ++b) out[b] = (*this)(b, r, c);
    return out;
}

HyperCube::HyperCube(Volume data, std::vector<double> wavelengths, std::string name)
    : data_(std::move(data)), wavelengths_(std::move(wavelengths)), name_(std::move(name)) {
    validate();
}

void HyperCube::validate() const {
    if (data_.bands == 0 || data_.rows == 0 || data_.cols == 0)
        throw DimensionError("hypercube dimensions must be positive, got " + std::to_string(data_.bands) + "x" +
                             std::to_string(data_.rows) + "x" + std::to_string(data_.cols));
    if (data_.data.size() != data_.bands * data_.rows * data_.cols)
        throw DimensionError("hypercube payload length does not match k*H*W");
    if (!wavelengths_.empty()) {
        if (wavelengths_.size() != data_.bands)
            throw DimensionError("wavelength axis has " + std::to_string(wavelengths_.size()) + " entries for " +
                                 std::to_string(data_.bands) + " bands");
        for (std::size_t i = 1; i < wavelengths_.size(); ++i)
            if (!(wavelengths_[i] > wavelengths_[i - 1]))
                throw DimensionError("wavelengths must be strictly increasing (index " + std::to_string(i) + ")");
    }
    for (std::size_t i = 0; i < data_.data.size(); ++i)
        if (!std::isfinite(data_.data[i]))
            throw NumericalError("non-finite reflectance at flat index " + std::to_string(i));
}

bool LabelVector::is_finite() const noexcept {
    for (double v : values)
        if (!std::isfinite(v)) return false;
    return true;
}

bool LabelVector::is_abundance(double tol) const noexcept {
    double sum = 0.0;
    for (double v : values) {
        if (!(v >= 0.0 && v <= 1.0)) return false;
        sum += v;
    }
    return !values.empty() && std::abs(sum - 1.0) <= tol;
}

LabelVector LabelField::at(std::size_t r, std::size_t c) const {
    LabelVector out;
    out.values = planes.spectrum(r, c);
    return out;
}

void LabelField::set(std::size_t r, std::size_t c, const LabelVector& v) {
    if (v.dim() != dim()) throw ShapeError("label dimension mismatch in LabelField::set");
    for (std::size_t d = 0; d < dim(); ++d) planes(d, r, c) = v.values[d];
}

void PatchSet::validate() const {
    if (patches.empty()) return;
    const auto& first = patches.front();
    for (std::size_t i = 1; i < patches.size(); ++i) {
        const auto& p = patches[i];
        if (!p.data.same_shape(first.data) || p.label.dim() != first.label.dim())
            throw ShapeError("patch " + std::to_string(i) + " does not share shape/label dimension with patch 0");
    }
}

LabelVector patch_label(std::span<const LabelVector> window) {
    if (window.empty()) throw ShapeError("patch_label: empty window");
    const std::size_t s = window.front().dim();
    LabelVector mean;
    mean.values.assign(s, 0.0);
    for (const auto& l : window) {
        if (l.dim() != s) throw ShapeError("patch_label: mixed label dimensions in window");
        for (std::size_t d = 0; d < s; ++d) mean.values[d] += l.values[d];
    }
    const double n = static_cast<double>(window.size());
    for (auto& v : mean.values) v /= n;
    return mean;
}

LabelVector patch_label(const LabelField& field, std::size_t row, std::size_t col, std::size_t size) {
    if (size == 0 || row + size > field.rows() || col + size > field.cols())
        throw DimensionError("patch_label: window exceeds label field");
    LabelVector mean;
    mean.values.assign(field.dim(), 0.0);
    for (std::size_t d = 0; d < field.dim(); ++d) {
        double acc = 0.0;
        for (std::size_t r = row; r < row + size; ++r)
            for (std::size_t c = col; c < col + size; ++c) acc += field.planes(d, r, c);
        mean.values[d] = acc / static_cast<double>(size * size);
    }
    return mean;
}

PatchSet extract_patches(const HyperCube& cube, const LabelField& labels, std::size_t size, std::size_t stride) {
    const std::size_t k = cube.bands(), h = cube.rows(), w = cube.cols();
    if (size == 0 || stride == 0) throw DimensionError("patch size and stride must be positive");
    if (size > h || size > w)
        throw DimensionError("patch size " + std::to_string(size) + " exceeds cube extent " + std::to_string(h) + "x" +
                             std::to_string(w));
    if (stride > h || stride > w)
        throw DimensionError("stride " + std::to_string(stride) + " exceeds cube extent");
    if (labels.rows() != h || labels.cols() != w)
        throw DimensionError("label field is " + std::to_string(labels.rows()) + "x" + std::to_string(labels.cols()) +
                             ", cube is " + std::to_string(h) + "x" + std::to_string(w));
    if (labels.dim() == 0) throw DimensionError("label dimension must be at least 1");

    PatchSet set;
    set.source_name = cube.name();
    set.stride = stride;
    const std::size_t nr = (h - size) / stride + 1;
    const std::size_t nc = (w - size) / stride + 1;
    set.patches.reserve(nr * nc);
    const Volume& src = cube.data();
    for (std::size_t i = 0; i < nr; ++i) {
        for (std::size_t j = 0; j < nc; ++j) {
            Patch p;
            p.origin_row = i * stride;
            p.origin_col = j * stride;
            p.data = Volume(k, size, size);
            for (std::size_t b = 0; b < k; ++b)
                for (std::size_t r = 0; r < size; ++r)
                    for (std::size_t c = 0; c < size; ++c)
                        p.data(b, r, c) = src(b, p.origin_row + r, p.origin_col + c);
            p.label = patch_label(labels, p.origin_row, p.origin_col, size);
            set.patches.push_back(std::move(p));
        }
    }
    return set;
}

}  // namespace hsicl
