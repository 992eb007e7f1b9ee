#include "hsicl/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hsicl/error.hpp"

namespace hsicl::augment {

namespace {

std::vector<double> gaussian_kernel(double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double t = i / sigma;
        k[i + radius] = std::exp(-0.5 * t * t);
        sum += k[i + radius];
    }
    for (auto& v : k) v /= sum;
    return k;
}

/// Strided 1D Gaussian smoothing with edge replication.
void smooth_line(double* data, std::size_t n, std::size_t stride, const std::vector<double>& kernel) {
    const int radius = static_cast<int>(kernel.size() / 2);
    std::vector<double> src(n);
    for (std::size_t i = 0; i < n; ++i) src[i] = data[i * stride];
    const auto last = static_cast<long>(n) - 1;
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int t = -radius; t <= radius; ++t) {
            const long j = std::clamp(static_cast<long>(i) + t, 0L, last);
            acc += kernel[t + radius] * src[j];
        }
        data[i * stride] = acc;
    }
}

double sample_bilinear(std::span<const double> img, std::size_t rows, std::size_t cols, double y, double x) {
    y = std::clamp(y, 0.0, static_cast<double>(rows - 1));
    x = std::clamp(x, 0.0, static_cast<double>(cols - 1));
    const auto r0 = static_cast<std::size_t>(std::floor(y));
    const auto c0 = static_cast<std::size_t>(std::floor(x));
    const std::size_t r1 = std::min(r0 + 1, rows - 1);
    const std::size_t c1 = std::min(c0 + 1, cols - 1);
    const double fy = y - static_cast<double>(r0);
    const double fx = x - static_cast<double>(c0);
    const double top = img[r0 * cols + c0] * (1.0 - fx) + img[r0 * cols + c1] * fx;
    const double bot = img[r1 * cols + c0] * (1.0 - fx) + img[r1 * cols + c1] * fx;
    return top * (1.0 - fy) + bot * fy;
}

double bump_sum(const std::vector<GainOffset::Bump>& bumps, double b) {
    double acc = 0.0;
    for (const auto& bump : bumps) {
        const double t = (b - bump.center) / bump.width;
        acc += bump.amplitude * std::exp(-0.5 * t * t);
    }
    return acc;
}

void require_square(const Volume& in, const char* op) {
    if (in.rows != in.cols)
        throw ParameterError(std::string(op) + ": needs a square spatial extent, got " + std::to_string(in.rows) + "x" +
                             std::to_string(in.cols));
}

}  // namespace

Volume spectral_shift(const Volume& in, int delta) {
    const auto k = static_cast<long>(in.bands);
    if (std::abs(static_cast<long>(delta)) >= k)
        throw ParameterError("spectral_shift: |delta| = " + std::to_string(std::abs(delta)) + " must be below k = " +
                             std::to_string(k));
    if (delta == 0) return in;
    Volume out(in.bands, in.rows, in.cols);
    for (long b = 0; b < k; ++b) {
        const long src = std::clamp(b - delta, 0L, k - 1);
        std::ranges::copy(in.band(static_cast<std::size_t>(src)), out.band(static_cast<std::size_t>(b)).begin());
    }
    return out;
}

Volume spectral_flip(const Volume& in) {
    Volume out(in.bands, in.rows, in.cols);
    for (std::size_t b = 0; b < in.bands; ++b) std::ranges::copy(in.band(in.bands - 1 - b), out.band(b).begin());
    return out;
}

double hapke_reflectance(double albedo, double mu0, double mu) {
    const double root = std::sqrt(1.0 - albedo);
    const double h0 = (1.0 + 2.0 * mu0) / (1.0 + 2.0 * mu0 * root);
    const double h = (1.0 + 2.0 * mu) / (1.0 + 2.0 * mu * root);
    return albedo / (4.0 * (mu0 + mu)) * h0 * h;
}

std::optional<double> hapke_albedo(double reflectance, double mu0, double mu, double tol) {
    // Reflectance is increasing in albedo on [0, 1).
    double lo = 0.0, hi = 1.0;
    if (!(reflectance >= 0.0) || reflectance >= hapke_reflectance(1.0, mu0, mu)) return std::nullopt;
    while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        if (hapke_reflectance(mid, mu0, mu) < reflectance)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

Volume hapke_scatter(const Volume& in, Geometry nominal, Geometry target) {
    for (double c : {nominal.mu0, nominal.mu, target.mu0, target.mu})
        if (!(c > 0.0 && c <= 1.0)) throw ParameterError("hapke_scatter: direction cosines must lie in (0, 1]");
    Volume out(in.bands, in.rows, in.cols);
    const std::size_t npx = in.pixels();
    for (std::size_t i = 0; i < in.data.size(); ++i) {
        const double r = std::clamp(in.data[i], 1e-6, 0.999);
        const auto w = hapke_albedo(r, nominal.mu0, nominal.mu);
        if (!w || !std::isfinite(*w)) {
            const std::size_t b = i / npx, px = i % npx;
            throw NumericalError("hapke_scatter: cannot invert reflectance at band " + std::to_string(b) + ", pixel (" +
                                 std::to_string(px / in.cols) + ", " + std::to_string(px % in.cols) + ")");
        }
        out.data[i] = hapke_reflectance(*w, target.mu0, target.mu);
    }
    return out;
}

std::vector<double> GainOffset::gain(std::size_t bands) const {
    std::vector<double> g(bands);
    for (std::size_t b = 0; b < bands; ++b) g[b] = 1.0 + bump_sum(gain_bumps, static_cast<double>(b));
    return g;
}

std::vector<double> GainOffset::offset(std::size_t bands) const {
    std::vector<double> o(bands);
    for (std::size_t b = 0; b < bands; ++b) o[b] = bump_sum(offset_bumps, static_cast<double>(b));
    return o;
}

GainOffset draw_gain_offset(std::size_t bands, double gain_amp, double offset_amp, int bumps, double width_frac,
                            Rng& rng) {
    if (!(gain_amp >= 0.0 && gain_amp <= 0.5)) throw ParameterError("atmospheric: gain amplitude must lie in [0, 0.5]");
    if (!(offset_amp >= 0.0 && offset_amp <= 0.1))
        throw ParameterError("atmospheric: offset amplitude must lie in [0, 0.1]");
    if (bumps < 0) throw ParameterError("atmospheric: bump count must be non-negative");
    if (!(width_frac > 0.0)) throw ParameterError("atmospheric: width fraction must be positive");
    const double kb = static_cast<double>(bands);
    const double width = std::max(1.0, width_frac * kb);
    GainOffset go;
    for (int i = 0; i < bumps; ++i) {
        go.gain_bumps.push_back({uniform(rng, -gain_amp, gain_amp), uniform(rng, 0.0, kb - 1.0), width});
        go.offset_bumps.push_back({uniform(rng, -offset_amp, offset_amp), uniform(rng, 0.0, kb - 1.0), width});
    }
    return go;
}

Volume apply_gain_offset(const Volume& in, std::span<const double> gain, std::span<const double> offset) {
    if (gain.size() != in.bands || offset.size() != in.bands)
        throw ShapeError("apply_gain_offset: curve length does not match band count");
    Volume out(in.bands, in.rows, in.cols);
    for (std::size_t b = 0; b < in.bands; ++b) {
        auto src = in.band(b);
        auto dst = out.band(b);
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] = gain[b] * src[i] + offset[b];
    }
    return out;
}

Volume atmospheric_compensation(const Volume& in, double gain_amp, double offset_amp, int bumps, Rng& rng,
                                double width_frac) {
    const GainOffset go = draw_gain_offset(in.bands, gain_amp, offset_amp, bumps, width_frac, rng);
    if (gain_amp == 0.0 && offset_amp == 0.0) return in;
    return apply_gain_offset(in, go.gain(in.bands), go.offset(in.bands));
}

std::vector<double> draw_spectral_displacement(std::size_t bands, double amplitude, double smoothness, Rng& rng) {
    if (!(amplitude >= 0.0)) throw ParameterError("spectral_elastic: amplitude must be non-negative");
    if (!(smoothness > 0.0)) throw ParameterError("spectral_elastic: smoothness must be positive");
    std::vector<double> d(bands);
    std::normal_distribution<double> normal;
    for (auto& v : d) v = normal(rng);
    smooth_line(d.data(), bands, 1, gaussian_kernel(smoothness));
    double peak = 0.0;
    for (double v : d) peak = std::max(peak, std::abs(v));
    for (auto& v : d) v = peak > 0.0 ? v * (amplitude / peak) : 0.0;
    return d;
}

Volume resample_spectra(const Volume& in, std::span<const double> displacement) {
    if (displacement.size() != in.bands) throw ShapeError("resample_spectra: displacement length != band count");
    Volume out(in.bands, in.rows, in.cols);
    const double last = static_cast<double>(in.bands - 1);
    for (std::size_t b = 0; b < in.bands; ++b) {
        const double pos = std::clamp(static_cast<double>(b) + displacement[b], 0.0, last);
        const auto b0 = static_cast<std::size_t>(std::floor(pos));
        const std::size_t b1 = std::min(b0 + 1, in.bands - 1);
        const double f = pos - static_cast<double>(b0);
        auto lo = in.band(b0);
        auto hi = in.band(b1);
        auto dst = out.band(b);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = lo[i] * (1.0 - f) + hi[i] * f;
    }
    return out;
}

Volume spectral_elastic(const Volume& in, double amplitude, double smoothness, Rng& rng) {
    const auto d = draw_spectral_displacement(in.bands, amplitude, smoothness, rng);
    if (amplitude == 0.0) return in;
    return resample_spectra(in, d);
}

Volume band_erasure(const Volume& in, double fraction, Rng& rng, std::vector<std::size_t>* erased) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw ParameterError("band_erasure: fraction must lie in [0, 1]");
    const auto count = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(in.bands)));
    std::vector<std::size_t> idx(in.bands);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    Volume out = in;
    for (std::size_t b : idx) std::ranges::fill(out.band(b), 0.0);
    if (erased) *erased = std::move(idx);
    return out;
}

Volume permute_bands(const Volume& in, std::span<const std::size_t> perm) {
    if (perm.size() != in.bands) throw ShapeError("permute_bands: permutation length != band count");
    Volume out(in.bands, in.rows, in.cols);
    for (std::size_t b = 0; b < in.bands; ++b) std::ranges::copy(in.band(perm[b]), out.band(b).begin());
    return out;
}

Volume band_permutation(const Volume& in, Rng& rng, std::vector<std::size_t>* perm) {
    std::vector<std::size_t> p(in.bands);
    std::iota(p.begin(), p.end(), std::size_t{0});
    std::shuffle(p.begin(), p.end(), rng);
    Volume out = permute_bands(in, p);
    if (perm) *perm = std::move(p);
    return out;
}

Volume nn_mixing(const Volume& in, double lambda, bool* no_neighbours) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParameterError("nn_mixing: lambda must lie in [0, 1]");
    if (no_neighbours) *no_neighbours = in.pixels() == 1;
    if (in.pixels() == 1 || lambda == 0.0) return in;
    Volume out(in.bands, in.rows, in.cols);
    const long rows = static_cast<long>(in.rows), cols = static_cast<long>(in.cols);
    constexpr long dr[] = {-1, 1, 0, 0};
    constexpr long dc[] = {0, 0, -1, 1};
    for (std::size_t b = 0; b < in.bands; ++b) {
        auto src = in.band(b);
        auto dst = out.band(b);
        for (long r = 0; r < rows; ++r)
            for (long c = 0; c < cols; ++c) {
                double sum = 0.0;
                int n = 0;
                for (int t = 0; t < 4; ++t) {
                    const long rr = r + dr[t], cc = c + dc[t];
                    if (rr < 0 || rr >= rows || cc < 0 || cc >= cols) continue;
                    sum += src[rr * cols + cc];
                    ++n;
                }
                const double self = src[r * cols + c];
                dst[r * cols + c] = n ? (1.0 - lambda) * self + lambda * (sum / n) : self;
            }
    }
    return out;
}

Volume spatial_rotate(const Volume& in, int quarter_turns) {
    const int turns = ((quarter_turns % 4) + 4) % 4;
    if (turns == 0) return in;
    if (turns % 2 == 1) require_square(in, "spatial_rotate");
    Volume out(in.bands, in.rows, in.cols);
    const std::size_t h = in.rows, w = in.cols;
    for (std::size_t b = 0; b < in.bands; ++b) {
        auto src = in.band(b);
        auto dst = out.band(b);
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t c = 0; c < w; ++c) {
                std::size_t sr = 0, sc = 0;
                switch (turns) {
                    case 1: sr = c, sc = w - 1 - r; break;
                    case 2: sr = h - 1 - r, sc = w - 1 - c; break;
                    default: sr = h - 1 - c, sc = r; break;
                }
                dst[r * w + c] = src[sr * w + sc];
            }
    }
    return out;
}

Volume spatial_rotate_angle(const Volume& in, double radians) {
    require_square(in, "spatial_rotate_angle");
    if (radians == 0.0) return in;
    const double cy = (static_cast<double>(in.rows) - 1.0) / 2.0;
    const double cx = (static_cast<double>(in.cols) - 1.0) / 2.0;
    const double cs = std::cos(radians), sn = std::sin(radians);
    Volume out(in.bands, in.rows, in.cols);
    for (std::size_t b = 0; b < in.bands; ++b) {
        auto src = in.band(b);
        auto dst = out.band(b);
        for (std::size_t r = 0; r < in.rows; ++r)
            for (std::size_t c = 0; c < in.cols; ++c) {
                const double y = static_cast<double>(r) - cy, x = static_cast<double>(c) - cx;
                // Inverse map: sample the source at the point rotated back.
                const double sy = cs * y - sn * x + cy;
                const double sx = sn * y + cs * x + cx;
                dst[r * in.cols + c] = sample_bilinear(src, in.rows, in.cols, sy, sx);
            }
    }
    return out;
}

DisplacementField draw_displacement_field(std::size_t rows, std::size_t cols, double amplitude, double smoothness,
                                          Rng& rng) {
    if (!(amplitude >= 0.0)) throw ParameterError("spatial_elastic: amplitude must be non-negative");
    if (!(smoothness > 0.0)) throw ParameterError("spatial_elastic: smoothness must be positive");
    DisplacementField f{rows, cols, std::vector<double>(rows * cols), std::vector<double>(rows * cols)};
    std::normal_distribution<double> normal;
    const auto kernel = gaussian_kernel(smoothness);
    for (auto* comp : {&f.dy, &f.dx}) {
        for (auto& v : *comp) v = normal(rng);
        for (std::size_t r = 0; r < rows; ++r) smooth_line(comp->data() + r * cols, cols, 1, kernel);
        for (std::size_t c = 0; c < cols; ++c) smooth_line(comp->data() + c, rows, cols, kernel);
    }
    double peak = 0.0;
    for (std::size_t i = 0; i < rows * cols; ++i) peak = std::max(peak, std::hypot(f.dy[i], f.dx[i]));
    const double scale = peak > 0.0 ? amplitude / peak : 0.0;
    for (std::size_t i = 0; i < rows * cols; ++i) {
        f.dy[i] *= scale;
        f.dx[i] *= scale;
    }
    return f;
}

Volume apply_displacement(const Volume& in, const DisplacementField& field) {
    if (field.rows != in.rows || field.cols != in.cols)
        throw ShapeError("apply_displacement: field does not match spatial extent");
    Volume out(in.bands, in.rows, in.cols);
    for (std::size_t b = 0; b < in.bands; ++b) {
        auto src = in.band(b);
        auto dst = out.band(b);
        for (std::size_t r = 0; r < in.rows; ++r)
            for (std::size_t c = 0; c < in.cols; ++c) {
                const std::size_t i = r * in.cols + c;
                dst[i] = sample_bilinear(src, in.rows, in.cols, static_cast<double>(r) + field.dy[i],
                                         static_cast<double>(c) + field.dx[i]);
            }
    }
    return out;
}

Volume spatial_elastic(const Volume& in, double amplitude, double smoothness, Rng& rng) {
    const auto field = draw_displacement_field(in.rows, in.cols, amplitude, smoothness, rng);
    if (amplitude == 0.0) return in;
    return apply_displacement(in, field);
}

Volume spatial_flip(const Volume& in, Axis axis) {
    Volume out(in.bands, in.rows, in.cols);
    const std::size_t h = in.rows, w = in.cols;
    for (std::size_t b = 0; b < in.bands; ++b) {
        auto src = in.band(b);
        auto dst = out.band(b);
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t c = 0; c < w; ++c)
                dst[r * w + c] = axis == Axis::Horizontal ? src[r * w + (w - 1 - c)] : src[(h - 1 - r) * w + c];
    }
    return out;
}

Volume spatial_translate(const Volume& in, int dx, int dy) {
    if (std::abs(dx) >= static_cast<int>(in.cols) || std::abs(dy) >= static_cast<int>(in.rows))
        throw ParameterError("spatial_translate: offsets must be smaller than the patch size");
    if (dx == 0 && dy == 0) return in;
    Volume out(in.bands, in.rows, in.cols);
    const long h = static_cast<long>(in.rows), w = static_cast<long>(in.cols);
    for (std::size_t b = 0; b < in.bands; ++b) {
        auto src = in.band(b);
        auto dst = out.band(b);
        for (long r = 0; r < h; ++r)
            for (long c = 0; c < w; ++c) {
                const long sr = std::clamp(r - dy, 0L, h - 1);
                const long sc = std::clamp(c - dx, 0L, w - 1);
                dst[r * w + c] = src[sr * w + sc];
            }
    }
    return out;
}

// ---- pipelines --------------------------------------------------------------

bool is_spectral(OpKind op) noexcept {
    switch (op) {
        case OpKind::Rotate:
        case OpKind::SpatialElastic:
        case OpKind::SpatialFlip:
        case OpKind::Translate: return false;
        default: return true;
    }
}

std::string_view op_name(OpKind op) noexcept {
    switch (op) {
        case OpKind::SpectralShift: return "spectral-shift";
        case OpKind::SpectralFlip: return "spectral-flip";
        case OpKind::Hapke: return "hapke";
        case OpKind::Atmospheric: return "atmospheric";
        case OpKind::SpectralElastic: return "spectral-elastic";
        case OpKind::BandErasure: return "band-erasure";
        case OpKind::BandPermutation: return "band-permutation";
        case OpKind::NnMixing: return "nn-mixing";
        case OpKind::Rotate: return "rotate";
        case OpKind::SpatialElastic: return "spatial-elastic";
        case OpKind::SpatialFlip: return "spatial-flip";
        case OpKind::Translate: return "translate";
    }
    return "?";
}

const std::vector<OpKind>& all_ops() {
    static const std::vector<OpKind> ops = {
        OpKind::SpectralShift,   OpKind::SpectralFlip, OpKind::Hapke,          OpKind::Atmospheric,
        OpKind::SpectralElastic, OpKind::BandErasure,  OpKind::BandPermutation, OpKind::NnMixing,
        OpKind::Rotate,          OpKind::SpatialElastic, OpKind::SpatialFlip,  OpKind::Translate,
    };
    return ops;
}

OpKind parse_op(std::string_view name) {
    for (OpKind op : all_ops())
        if (op_name(op) == name) return op;
    throw ParameterError("unknown augmentation operator '" + std::string(name) + "'");
}

const std::vector<ParamInfo>& describe_params(OpKind op) {
    static const std::map<OpKind, std::vector<ParamInfo>> table = {
        {OpKind::SpectralShift, {{"max_delta", 2, 0, 1e6, "largest |shift| in bands, drawn uniformly"},
                                 {"delta", 0, -1e6, 1e6, "fixed shift in bands when fixed=1"},
                                 {"fixed", 0, 0, 1, "use 'delta' instead of drawing"}}},
        {OpKind::SpectralFlip, {}},
        {OpKind::Hapke, {{"nominal_mu0", 1.0, 1e-6, 1.0, "incidence cosine the data was acquired under"},
                         {"nominal_mu", 1.0, 1e-6, 1.0, "emission cosine the data was acquired under"},
                         {"min_cos", 0.6, 1e-6, 1.0, "new cosines are drawn uniformly in [min_cos, 1]"}}},
        {OpKind::Atmospheric, {{"gain_amp", 0.1, 0.0, 0.5, "per-bump gain amplitude bound"},
                               {"offset_amp", 0.01, 0.0, 0.1, "per-bump offset amplitude bound"},
                               {"bumps", 3, 0, 64, "number of Gaussian bumps per curve"},
                               {"width_frac", 0.15, 1e-6, 10.0, "bump width as a fraction of k"}}},
        {OpKind::SpectralElastic, {{"amplitude", 1.5, 0.0, 1e6, "peak displacement in bands"},
                                   {"smoothness", 4.0, 1e-6, 1e6, "smoothing sigma in bands"}}},
        {OpKind::BandErasure, {{"fraction", 0.05, 0.0, 1.0, "fraction of bands zeroed"}}},
        {OpKind::BandPermutation, {}},
        {OpKind::NnMixing, {{"lambda_min", 0.0, 0.0, 1.0, "lower bound of the mixing weight"},
                            {"lambda_max", 0.5, 0.0, 1.0, "upper bound of the mixing weight"}}},
        {OpKind::Rotate, {{"turns", -1, -1, 3, "quarter turns; -1 draws 0..3"},
                          {"max_angle_deg", 0, 0, 180, "when > 0, bilinear rotation by a uniform angle"}}},
        {OpKind::SpatialElastic, {{"amplitude", 0.5, 0.0, 1e6, "peak displacement in pixels"},
                                  {"smoothness", 1.5, 1e-6, 1e6, "smoothing sigma in pixels"}}},
        {OpKind::SpatialFlip, {{"axis", -1, -1, 1, "0 horizontal, 1 vertical, -1 random"}}},
        {OpKind::Translate, {{"max_offset", 1, 0, 1e6, "largest |offset| in pixels, drawn uniformly"},
                             {"dx", 0, -1e6, 1e6, "fixed column offset when fixed=1"},
                             {"dy", 0, -1e6, 1e6, "fixed row offset when fixed=1"},
                             {"fixed", 0, 0, 1, "use dx/dy instead of drawing"}}},
    };
    return table.at(op);
}

double AugmentSpec::param(const std::string& key) const {
    if (auto it = params.find(key); it != params.end()) return it->second;
    for (const auto& info : describe_params(op))
        if (info.name == key) return info.default_value;
    throw ParameterError(std::string(op_name(op)) + ": no parameter '" + key + "'");
}

void AugmentSpec::validate() const {
    const auto& infos = describe_params(op);
    for (const auto& [key, value] : params) {
        auto it = std::ranges::find_if(infos, [&](const ParamInfo& i) { return i.name == key; });
        if (it == infos.end())
            throw ParameterError(std::string(op_name(op)) + ": unknown parameter '" + key + "'");
        if (!(value >= it->min && value <= it->max))
            throw ParameterError(std::string(op_name(op)) + ": parameter '" + key + "' = " + std::to_string(value) +
                                 " outside [" + std::to_string(it->min) + ", " + std::to_string(it->max) + "]");
    }
    if (op == OpKind::NnMixing && param("lambda_min") > param("lambda_max"))
        throw ParameterError("nn-mixing: lambda_min exceeds lambda_max");
}

Volume apply_spec(const Volume& in, const AugmentSpec& spec, Rng& rng) {
    auto as_int = [](double v) { return static_cast<int>(std::lround(v)); };
    switch (spec.op) {
        case OpKind::SpectralShift: {
            int delta = as_int(spec.param("delta"));
            if (spec.param("fixed") == 0.0) {
                const int cap = std::min(as_int(spec.param("max_delta")), static_cast<int>(in.bands) - 1);
                delta = static_cast<int>(uniform_int(rng, -cap, cap));
            }
            return spectral_shift(in, delta);
        }
        case OpKind::SpectralFlip: return spectral_flip(in);
        case OpKind::Hapke: {
            const Geometry nominal{spec.param("nominal_mu0"), spec.param("nominal_mu")};
            const double lo = spec.param("min_cos");
            const Geometry target{uniform(rng, lo, 1.0), uniform(rng, lo, 1.0)};
            return hapke_scatter(in, nominal, target);
        }
        case OpKind::Atmospheric:
            return atmospheric_compensation(in, spec.param("gain_amp"), spec.param("offset_amp"),
                                            as_int(spec.param("bumps")), rng, spec.param("width_frac"));
        case OpKind::SpectralElastic:
            return spectral_elastic(in, spec.param("amplitude"), spec.param("smoothness"), rng);
        case OpKind::BandErasure: return band_erasure(in, spec.param("fraction"), rng);
        case OpKind::BandPermutation: return band_permutation(in, rng);
        case OpKind::NnMixing: {
            const double lo = spec.param("lambda_min"), hi = spec.param("lambda_max");
            const double lambda = lo == hi ? lo : uniform(rng, lo, hi);
            return nn_mixing(in, lambda);
        }
        case OpKind::Rotate: {
            const double max_angle = spec.param("max_angle_deg");
            if (max_angle > 0.0) {
                const double deg = uniform(rng, -max_angle, max_angle);
                return spatial_rotate_angle(in, deg * 3.14159265358979323846 / 180.0);
            }
            int turns = as_int(spec.param("turns"));
            if (turns < 0) turns = static_cast<int>(uniform_int(rng, 0, 3));
            return spatial_rotate(in, turns);
        }
        case OpKind::SpatialElastic:
            return spatial_elastic(in, spec.param("amplitude"), spec.param("smoothness"), rng);
        case OpKind::SpatialFlip: {
            int axis = as_int(spec.param("axis"));
            if (axis < 0) axis = static_cast<int>(uniform_int(rng, 0, 1));
            return spatial_flip(in, axis == 0 ? Axis::Horizontal : Axis::Vertical);
        }
        case OpKind::Translate: {
            int dx = as_int(spec.param("dx")), dy = as_int(spec.param("dy"));
            if (spec.param("fixed") == 0.0) {
                const int cap_x = std::min(as_int(spec.param("max_offset")), static_cast<int>(in.cols) - 1);
                const int cap_y = std::min(as_int(spec.param("max_offset")), static_cast<int>(in.rows) - 1);
                dx = static_cast<int>(uniform_int(rng, -cap_x, cap_x));
                dy = static_cast<int>(uniform_int(rng, -cap_y, cap_y));
            }
            return spatial_translate(in, dx, dy);
        }
    }
    throw ParameterError("apply_spec: unhandled operator");
}

void AugmentPipeline::validate() const {
    for (std::size_t i = 0; i < stages.size(); ++i) {
        if (stages[i].choices.empty())
            throw ParameterError("augment pipeline stage " + std::to_string(i) + " has no operators");
        for (const auto& spec : stages[i].choices) spec.validate();
    }
}

AugmentPipeline AugmentPipeline::fixed(std::vector<AugmentSpec> specs, std::uint64_t seed) {
    AugmentPipeline p;
    p.master_seed = seed;
    for (auto& s : specs) p.stages.push_back(AugmentStage{{std::move(s)}});
    return p;
}

Rng stage_rng(std::uint64_t master_seed, std::uint64_t sample_index, std::size_t stage) {
    return make_rng(master_seed, {sample_index, stage});
}

Volume apply_pipeline(const Volume& in, const AugmentPipeline& pipeline, std::uint64_t sample_index) {
    Volume v = in;
    for (std::size_t i = 0; i < pipeline.stages.size(); ++i) {
        const auto& stage = pipeline.stages[i];
        Rng rng = stage_rng(pipeline.master_seed, sample_index, i);
        std::size_t pick = 0;
        if (stage.choices.size() > 1)
            pick = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(stage.choices.size()) - 1));
        v = apply_spec(v, stage.choices.at(pick), rng);
    }
    return v;
}

Patch apply_pipeline(const Patch& patch, const AugmentPipeline& pipeline, std::uint64_t sample_index) {
    Patch out;
    out.data = apply_pipeline(patch.data, pipeline, sample_index);
    out.origin_row = patch.origin_row;
    out.origin_col = patch.origin_col;
    out.label = patch.label;
    return out;
}

}  // namespace hsicl::augment
