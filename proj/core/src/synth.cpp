#include "hsicl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "hsicl/error.hpp"
#include "hsicl/rng.hpp"

namespace hsicl {

std::vector<double> EndmemberMatrix::column(std::size_t j) const {
    std::vector<double> out(bands);
    for (std::size_t b = 0; b < bands; ++b) out[b] = (*this)(b, j);
    return out;
}

std::vector<double> default_wavelengths(std::size_t bands, double lo, double hi) {
    std::vector<double> wl(bands);
    for (std::size_t b = 0; b < bands; ++b)
        wl[b] = bands == 1 ? lo : lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bands - 1);
    return wl;
}

EndmemberMatrix synth_endmembers(std::size_t count, std::size_t bands, std::uint64_t seed) {
    if (count < 1) throw ParameterError("synth_endmembers: need at least one endmember");
    if (bands < 2) throw ParameterError("synth_endmembers: need at least two bands");

    EndmemberMatrix m;
    m.bands = bands;
    m.count = count;
    m.values.assign(bands * count, 0.0);
    m.wavelengths = default_wavelengths(bands);
    const double kb = static_cast<double>(bands);

    for (std::size_t j = 0; j < count; ++j) {
        m.names.push_back("em" + std::to_string(j));
        for (std::uint64_t attempt = 0;; ++attempt) {
            Rng rng = make_rng(seed, {fnv1a("endmember"), j, attempt});
            const auto bumps = uniform_int(rng, 2, 5);
            std::vector<double> raw(bands, 0.0);
            for (std::int64_t n = 0; n < bumps; ++n) {
                const double center = uniform(rng, 0.0, kb - 1.0);
                const double width = uniform(rng, 0.03, 0.25) * kb;
                const double amp = uniform(rng, 0.2, 1.0);
                for (std::size_t b = 0; b < bands; ++b) {
                    const double t = (static_cast<double>(b) - center) / width;
                    raw[b] += amp * std::exp(-0.5 * t * t);
                }
            }
            const auto [lo_it, hi_it] = std::minmax_element(raw.begin(), raw.end());
            const double lo = *lo_it, range = *hi_it - *lo_it;
            if (!(range > 1e-12)) continue;
            for (std::size_t b = 0; b < bands; ++b) m(b, j) = std::clamp(0.05 + 0.9 * (raw[b] - lo) / range, 0.05, 0.95);

            bool distinct = true;
            for (std::size_t q = 0; q < j && distinct; ++q) {
                bool same = true;
                for (std::size_t b = 0; b < bands && same; ++b) same = m(b, q) == m(b, j);
                distinct = !same;
            }
            if (distinct) break;
        }
    }
    return m;
}

EndmemberMatrix read_endmembers(std::istream& in) {
    std::string line;
    std::size_t lineno = 0;
    auto next_line = [&]() -> bool {
        while (std::getline(in, line)) {
            ++lineno;
            const auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos || line[first] == '#') continue;
            return true;
        }
        return false;
    };
    auto fail = [&](const std::string& what) -> ParseError {
        return ParseError("endmember file line " + std::to_string(lineno) + ": " + what);
    };

    if (!next_line()) throw ParseError("endmember file: missing header line");
    std::istringstream header(line);
    long long k = 0, p = 0;
    std::string flag;
    if (!(header >> k >> p)) throw fail("header must read \"k p\" or \"k p +wl\"");
    header >> flag;
    bool with_wl = false;
    if (flag == "+wl")
        with_wl = true;
    else if (!flag.empty())
        throw fail("unknown header flag '" + flag + "'");
    if (k < 1 || p < 1) throw fail("dimensions must be positive");

    EndmemberMatrix m;
    m.bands = static_cast<std::size_t>(k);
    m.count = static_cast<std::size_t>(p);
    m.values.assign(m.bands * m.count, 0.0);
    for (std::size_t j = 0; j < m.count; ++j) m.names.push_back("em" + std::to_string(j));

    for (std::size_t b = 0; b < m.bands; ++b) {
        if (!next_line()) throw fail("expected " + std::to_string(k) + " data rows, file ended after " + std::to_string(b));
        std::istringstream row(line);
        std::vector<double> vals;
        std::string tok;
        while (row >> tok) {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(tok, &used);
            } catch (const std::exception&) {
                throw fail("not a number: '" + tok + "'");
            }
            if (used != tok.size()) throw fail("not a number: '" + tok + "'");
            vals.push_back(v);
        }
        const std::size_t expect = m.count + (with_wl ? 1 : 0);
        if (vals.size() != expect)
            throw fail("expected " + std::to_string(expect) + " values, got " + std::to_string(vals.size()));
        for (std::size_t j = 0; j < m.count; ++j) {
            if (!std::isfinite(vals[j]) || vals[j] < 0.0 || vals[j] > 1.0)
                throw fail("reflectance in column " + std::to_string(j + 1) + " outside [0, 1]");
            m(b, j) = vals[j];
        }
        if (with_wl) m.wavelengths.push_back(vals.back());
    }
    if (next_line()) throw fail("unexpected extra row");
    for (std::size_t i = 1; i < m.wavelengths.size(); ++i)
        if (!(m.wavelengths[i] > m.wavelengths[i - 1]))
            throw ParseError("endmember file: wavelengths not strictly increasing at row " + std::to_string(i));
    return m;
}

EndmemberMatrix load_endmembers(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open endmember file " + path);
    return read_endmembers(in);
}

void write_endmembers(std::ostream& out, const EndmemberMatrix& m) {
    const bool with_wl = m.wavelengths.size() == m.bands;
    out << m.bands << ' ' << m.count << (with_wl ? " +wl" : "") << '\n';
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (std::size_t b = 0; b < m.bands; ++b) {
        for (std::size_t j = 0; j < m.count; ++j) out << (j ? " " : "") << m(b, j);
        if (with_wl) out << ' ' << m.wavelengths[b];
        out << '\n';
    }
}

void save_endmembers(const std::string& path, const EndmemberMatrix& m) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write endmember file " + path);
    write_endmembers(out, m);
}

LabelField sample_abundances(std::size_t rows, std::size_t cols, std::span<const double> concentration,
                             std::uint64_t seed) {
    if (concentration.empty()) throw ParameterError("sample_abundances: empty concentration vector");
    for (double a : concentration)
        if (!(a > 0.0) || !std::isfinite(a))
            throw ParameterError("sample_abundances: concentrations must be positive and finite");

    const std::size_t p = concentration.size();
    LabelField field(p, rows, cols);
    std::vector<std::gamma_distribution<double>> gammas;
    for (double a : concentration) gammas.emplace_back(a, 1.0);
    std::vector<double> draw(p);

    for (std::size_t px = 0; px < rows * cols; ++px) {
        Rng rng = make_rng(seed, {fnv1a("abundance"), px});
        double sum = 0.0;
        for (int attempt = 0; attempt < 64 && !(sum > 0.0); ++attempt) {
            sum = 0.0;
            for (std::size_t j = 0; j < p; ++j) {
                gammas[j].reset();
                draw[j] = gammas[j](rng);
                sum += draw[j];
            }
        }
        if (!(sum > 0.0)) {
            // All gamma draws underflowed (extremely small concentrations).
            std::fill(draw.begin(), draw.end(), 0.0);
            draw[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(p) - 1))] = 1.0;
            sum = 1.0;
        }
        for (std::size_t j = 0; j < p; ++j) field.planes.data[j * rows * cols + px] = draw[j] / sum;
    }
    return field;
}

std::vector<double> pnmm_mix(const EndmemberMatrix& m, std::span<const double> abundances) {
    if (abundances.size() != m.count)
        throw ShapeError("pnmm_mix: abundance vector has " + std::to_string(abundances.size()) +
                         " entries for " + std::to_string(m.count) + " endmembers");
    std::vector<double> x(m.bands, 0.0);
    for (std::size_t b = 0; b < m.bands; ++b) {
        double lin = 0.0;
        for (std::size_t j = 0; j < m.count; ++j) lin += m(b, j) * abundances[j];
        x[b] = lin + lin * lin;
    }
    return x;
}

HyperCube add_noise_snr(const HyperCube& cube, std::optional<double> snr_db, std::uint64_t seed) {
    if (!snr_db) return cube;
    if (!std::isfinite(*snr_db)) throw ParameterError("add_noise_snr: snr_db must be finite");
    const Volume& v = cube.data();
    if (v.data.empty()) throw DimensionError("add_noise_snr: empty cube");

    double power = 0.0;
    for (double x : v.data) power += x * x;
    power /= static_cast<double>(v.data.size());
    if (!(power > 0.0)) throw NumericalError("add_noise_snr: all-zero cube has no signal power to calibrate against");

    const double sigma = std::sqrt(power / std::pow(10.0, *snr_db / 10.0));
    Volume out = v;
    const std::size_t npx = v.pixels();
    for (std::size_t px = 0; px < npx; ++px) {
        Rng rng = make_rng(seed, {fnv1a("noise"), px});
        std::normal_distribution<double> normal(0.0, sigma);
        for (std::size_t b = 0; b < v.bands; ++b) out.data[b * npx + px] += normal(rng);
    }
    return HyperCube(std::move(out), cube.wavelengths(), cube.name());
}

double modulation_gain(std::size_t rows, std::size_t cols, std::size_t row, std::size_t col, double sigma,
                       double floor) {
    const double uc = (static_cast<double>(rows) - 1.0) / 2.0;
    const double vc = (static_cast<double>(cols) - 1.0) / 2.0;
    const double du = static_cast<double>(row) - uc;
    const double dv = static_cast<double>(col) - vc;
    return floor + (1.0 - floor) * std::exp(-(du * du + dv * dv) / (2.0 * sigma * sigma));
}

HyperCube gaussian_modulation(const HyperCube& cube, double sigma, double floor) {
    if (!(sigma > 0.0)) throw ParameterError("gaussian_modulation: sigma must be positive");
    if (!(floor > 0.0 && floor <= 1.0)) throw ParameterError("gaussian_modulation: floor must lie in (0, 1]");
    Volume out = cube.data();
    for (std::size_t r = 0; r < out.rows; ++r)
        for (std::size_t c = 0; c < out.cols; ++c) {
            const double g = modulation_gain(out.rows, out.cols, r, c, sigma, floor);
            for (std::size_t b = 0; b < out.bands; ++b) out(b, r, c) *= g;
        }
    return HyperCube(std::move(out), cube.wavelengths(), cube.name());
}

double realized_snr_db(const HyperCube& clean, const HyperCube& noisy) {
    const auto& a = clean.data();
    const auto& b = noisy.data();
    if (!a.same_shape(b)) throw ShapeError("realized_snr_db: cube shapes differ");
    double ps = 0.0, pn = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        ps += a.data[i] * a.data[i];
        const double n = b.data[i] - a.data[i];
        pn += n * n;
    }
    if (!(pn > 0.0)) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(ps / pn);
}

SynthConfig SynthConfig::paper_scale() {
    SynthConfig c;
    c.rows = 100;
    c.cols = 100;
    c.bands = 224;
    c.endmembers = 4;
    c.snr_db = 20.0;
    c.modulation_sigma = 25.0;
    return c;
}

void SynthConfig::validate() const {
    if (rows == 0 || cols == 0 || bands == 0 || endmembers == 0)
        throw ParameterError("synth config: all dimensions must be positive");
    if (!dirichlet_concentration.empty() && dirichlet_concentration.size() != endmembers)
        throw ParameterError("synth config: dirichlet concentration needs " + std::to_string(endmembers) + " values");
    if (snr_db && !std::isfinite(*snr_db)) throw ParameterError("synth config: snr_db must be finite or 'none'");
    if (!(modulation_sigma > 0.0)) throw ParameterError("synth config: modulation_sigma must be positive");
    if (!(modulation_floor > 0.0 && modulation_floor <= 1.0))
        throw ParameterError("synth config: modulation_floor must lie in (0, 1]");
}

Scene generate_scene(const SynthConfig& config, const EndmemberMatrix& endmembers) {
    config.validate();
    if (endmembers.bands != config.bands || endmembers.count != config.endmembers)
        throw ShapeError("generate_scene: endmember matrix is " + std::to_string(endmembers.bands) + "x" +
                         std::to_string(endmembers.count) + ", config wants " + std::to_string(config.bands) + "x" +
                         std::to_string(config.endmembers));

    std::vector<double> alpha = config.dirichlet_concentration;
    if (alpha.empty()) alpha.assign(config.endmembers, 1.0);
    LabelField abundances = sample_abundances(config.rows, config.cols, alpha, derive_seed(config.seed, {1}));

    Volume mixed(config.bands, config.rows, config.cols);
    std::vector<double> a(config.endmembers);
    for (std::size_t r = 0; r < config.rows; ++r)
        for (std::size_t c = 0; c < config.cols; ++c) {
            for (std::size_t j = 0; j < config.endmembers; ++j) a[j] = abundances.planes(j, r, c);
            const auto x = pnmm_mix(endmembers, a);
            for (std::size_t b = 0; b < config.bands; ++b) mixed(b, r, c) = x[b];
        }

    std::vector<double> wl = endmembers.wavelengths.size() == config.bands ? endmembers.wavelengths
                                                                            : default_wavelengths(config.bands);
    HyperCube clean = gaussian_modulation(HyperCube(std::move(mixed), std::move(wl), config.name),
                                          config.modulation_sigma, config.modulation_floor);
    HyperCube noisy = add_noise_snr(clean, config.snr_db, derive_seed(config.seed, {2}));
    return Scene{std::move(noisy), std::move(clean), std::move(abundances)};
}

}  // namespace hsicl
