#include <cmath>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "hsicl/error.hpp"
#include "hsicl/synth.hpp"

using namespace hsicl;

namespace {

bool all_in(const EndmemberMatrix& m, double lo, double hi) {
    for (double v : m.values)
        if (v < lo || v > hi) return false;
    return true;
}

EndmemberMatrix random_matrix(std::size_t k, std::size_t p, std::uint64_t seed) {
    EndmemberMatrix m;
    m.bands = k;
    m.count = p;
    auto v = testutil::random_volume(1, k, p, seed, 0.0, 1.0);
    m.values = v.data;
    return m;
}

}  // namespace

TEST_CASE("synth_endmembers shapes, range and determinism") {
    auto m = synth_endmembers(4, 224, 9);
    CHECK(m.bands == 224);
    CHECK(m.count == 4);
    CHECK(m.values.size() == 224 * 4);
    CHECK(all_in(m, 0.05, 0.95));

    auto tiny = synth_endmembers(1, 2, 9);
    CHECK(tiny.values.size() == 2);
    CHECK(all_in(tiny, 0.05, 0.95));

    CHECK(synth_endmembers(4, 224, 9) == m);
    CHECK_FALSE(synth_endmembers(4, 224, 10) == m);
}

TEST_CASE("endmember files") {
    SUBCASE("156 rows of three columns") {
        std::ostringstream text;
        text << "156 3\n";
        for (int b = 0; b < 156; ++b) text << 0.1 << ' ' << 0.2 << ' ' << 0.3 << '\n';
        std::istringstream in(text.str());
        auto m = read_endmembers(in);
        CHECK(m.bands == 156);
        CHECK(m.count == 3);
    }
    SUBCASE("negative entries are rejected with the line number") {
        std::istringstream in("2 2\n0.1 0.2\n0.3 -0.4\n");
        try {
            read_endmembers(in);
            FAIL("expected a parse error");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find("line 3") != std::string::npos);
        }
    }
    SUBCASE("ragged rows are rejected") {
        std::istringstream in("2 2\n0.1 0.2\n0.3\n");
        CHECK_THROWS_AS(read_endmembers(in), ParseError);
    }
    SUBCASE("write then read is lossless") {
        auto m = synth_endmembers(3, 17, 4);
        m.wavelengths = default_wavelengths(17);
        std::stringstream buf;
        write_endmembers(buf, m);
        auto back = read_endmembers(buf);
        CHECK(back.values == m.values);
        CHECK(back.wavelengths == m.wavelengths);
    }
}

TEST_CASE("sample_abundances") {
    SUBCASE("uniform Dirichlet has mean 1/p") {
        auto field = sample_abundances(250, 400, std::vector<double>{1, 1, 1, 1}, 11);
        for (std::size_t j = 0; j < 4; ++j) {
            double s = 0.0;
            for (double v : field.planes.band(j)) s += v;
            CHECK(std::abs(s / 1e5 - 0.25) < 0.01);
        }
    }
    SUBCASE("one component is always exactly one") {
        auto field = sample_abundances(5, 6, std::vector<double>{2.5}, 1);
        for (double v : field.planes.data) CHECK(v == 1.0);
    }
    SUBCASE("every pixel lies on the simplex") {
        auto field = sample_abundances(20, 20, std::vector<double>{0.3, 1.0, 4.0}, 5);
        for (std::size_t r = 0; r < 20; ++r)
            for (std::size_t c = 0; c < 20; ++c) {
                auto a = field.at(r, c);
                double s = 0.0;
                for (double v : a.values) {
                    CHECK(v >= 0.0);
                    s += v;
                }
                CHECK(std::abs(s - 1.0) <= 1e-9);
            }
    }
    SUBCASE("non-positive concentration is a parameter error") {
        CHECK_THROWS_AS(sample_abundances(2, 2, std::vector<double>{1.0, 0.0}, 1), ParameterError);
    }
}

TEST_CASE("pnmm_mix") {
    SUBCASE("pure pixel gives m + m*m") {
        auto m = synth_endmembers(3, 10, 2);
        auto y = pnmm_mix(m, std::vector<double>{0.0, 1.0, 0.0});
        for (std::size_t b = 0; b < 10; ++b) CHECK(y[b] == m(b, 1) + m(b, 1) * m(b, 1));
    }
    SUBCASE("zero matrix gives zero spectrum") {
        EndmemberMatrix m;
        m.bands = 6;
        m.count = 2;
        m.values.assign(12, 0.0);
        for (double v : pnmm_mix(m, std::vector<double>{0.4, 0.6})) CHECK(v == 0.0);
    }
    SUBCASE("matches a scalar loop and the linear-plus-square identity") {
        auto m = random_matrix(31, 4, 8);
        const std::vector<double> a{0.1, 0.2, 0.3, 0.4};
        auto y = pnmm_mix(m, a);
        for (std::size_t b = 0; b < 31; ++b) {
            double lin = 0.0;
            for (std::size_t j = 0; j < 4; ++j) lin += m.values[b * 4 + j] * a[j];
            CHECK(y[b] == doctest::Approx(lin + lin * lin).epsilon(1e-12));
            CHECK(y[b] - lin * lin == doctest::Approx(lin).epsilon(1e-12));
        }
    }
    SUBCASE("dimension mismatch") {
        auto m = synth_endmembers(3, 10, 2);
        CHECK_THROWS_AS(pnmm_mix(m, std::vector<double>{0.5, 0.5}), ShapeError);
    }
}

TEST_CASE("add_noise_snr") {
    SynthConfig cfg;
    cfg.snr_db.reset();
    auto ems = synth_endmembers(cfg.endmembers, cfg.bands, 3);
    auto clean = generate_scene(cfg, ems).cube;

    SUBCASE("20 dB is realised within 0.2 dB and the noise is centred") {
        auto noisy = add_noise_snr(clean, 20.0, 77);
        CHECK(realized_snr_db(clean, noisy) >= 19.8);
        CHECK(realized_snr_db(clean, noisy) <= 20.2);

        const auto n = static_cast<double>(clean.data().size());
        double mean = 0.0, var = 0.0;
        for (std::size_t i = 0; i < clean.data().size(); ++i) mean += noisy.data().data[i] - clean.data().data[i];
        mean /= n;
        for (std::size_t i = 0; i < clean.data().size(); ++i) {
            const double d = noisy.data().data[i] - clean.data().data[i] - mean;
            var += d * d;
        }
        const double sigma = std::sqrt(var / n);
        CHECK(std::abs(mean) <= 3.0 * sigma / std::sqrt(n));
    }
    SUBCASE("no-noise sentinel returns the input") {
        CHECK(add_noise_snr(clean, std::nullopt, 1) == clean);
    }
    SUBCASE("0 dB makes noise power equal signal power") {
        HyperCube big(testutil::random_volume(100, 100, 100, 5));
        auto noisy = add_noise_snr(big, 0.0, 6);
        double ps = 0.0, pn = 0.0;
        for (std::size_t i = 0; i < big.data().size(); ++i) {
            ps += big.data().data[i] * big.data().data[i];
            const double d = noisy.data().data[i] - big.data().data[i];
            pn += d * d;
        }
        CHECK(std::abs(pn / ps - 1.0) <= 0.02);
    }
    SUBCASE("all-zero cube cannot be calibrated") {
        CHECK_THROWS_AS(add_noise_snr(HyperCube(Volume(3, 4, 4, 0.0)), 20.0, 1), NumericalError);
    }
}

TEST_CASE("gaussian_modulation") {
    SUBCASE("centre pixel of an odd grid keeps its value") {
        HyperCube cube(testutil::random_volume(3, 5, 5, 1));
        auto out = gaussian_modulation(cube, 2.0, 0.5);
        for (std::size_t b = 0; b < 3; ++b) CHECK(out.data()(b, 2, 2) == cube.data()(b, 2, 2));
    }
    SUBCASE("huge sigma leaves every multiplier at one") {
        for (std::size_t r = 0; r < 100; r += 9)
            for (std::size_t c = 0; c < 100; c += 11)
                CHECK(std::abs(modulation_gain(100, 100, r, c, 1e9, 0.5) - 1.0) <= 1e-6);
    }
    SUBCASE("corner of a 100x100 grid at sigma 25, floor 0.5") {
        // Midpoint is (49.5, 49.5), so the squared distance is 2 * 49.5^2.
        const double expected = 0.5 + 0.5 * std::exp(-(2.0 * 49.5 * 49.5) / (2.0 * 25.0 * 25.0));
        CHECK(modulation_gain(100, 100, 0, 0, 25.0, 0.5) == doctest::Approx(expected).epsilon(1e-12));
    }
    SUBCASE("modulation commutes with linear mixing") {
        auto m = random_matrix(8, 3, 12);
        auto field = sample_abundances(6, 7, std::vector<double>{1, 1, 1}, 4);
        for (std::size_t r = 0; r < 6; ++r)
            for (std::size_t c = 0; c < 7; ++c) {
                const double g = modulation_gain(6, 7, r, c, 3.0, 0.4);
                auto a = field.at(r, c).values;
                std::vector<double> scaled(a);
                for (auto& v : scaled) v *= g;
                for (std::size_t b = 0; b < 8; ++b) {
                    double mix_then_mod = 0.0, mod_then_mix = 0.0;
                    for (std::size_t j = 0; j < 3; ++j) {
                        mix_then_mod += m(b, j) * a[j];
                        mod_then_mix += m(b, j) * scaled[j];
                    }
                    CHECK(mix_then_mod * g == doctest::Approx(mod_then_mix).epsilon(1e-12));
                }
            }
    }
}

TEST_CASE("generate_scene") {
    SUBCASE("paper-scale configuration") {
        auto cfg = SynthConfig::paper_scale();
        CHECK(cfg.rows == 100);
        CHECK(cfg.cols == 100);
        CHECK(cfg.bands == 224);
        CHECK(cfg.endmembers == 4);
        REQUIRE(cfg.snr_db.has_value());
        CHECK(*cfg.snr_db == 20.0);
        auto scene = generate_scene(cfg, synth_endmembers(4, 224, cfg.seed));
        CHECK(scene.cube.bands() == 224);
        CHECK(scene.cube.rows() == 100);
        CHECK(scene.clean.cols() == 100);
        CHECK(scene.abundances.dim() == 4);
        CHECK(realized_snr_db(scene.clean, scene.cube) == doctest::Approx(20.0).epsilon(0.01));
    }
    SUBCASE("identity stages leave the pure endmember spectrum") {
        SynthConfig cfg;
        cfg.rows = 4;
        cfg.cols = 3;
        cfg.bands = 9;
        cfg.endmembers = 1;
        cfg.snr_db.reset();
        cfg.modulation_floor = 1.0;
        cfg.modulation_sigma = 1e12;
        auto m = synth_endmembers(1, 9, 1);
        auto scene = generate_scene(cfg, m);
        for (std::size_t r = 0; r < 4; ++r)
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t b = 0; b < 9; ++b)
                    CHECK(scene.cube.data()(b, r, c) == m(b, 0) + m(b, 0) * m(b, 0));
    }
    SUBCASE("fixed seed is reproducible") {
        SynthConfig cfg;
        cfg.rows = cfg.cols = 16;
        auto m = synth_endmembers(cfg.endmembers, cfg.bands, 2);
        auto a = generate_scene(cfg, m), b = generate_scene(cfg, m);
        CHECK(a.cube == b.cube);
        CHECK(a.abundances == b.abundances);
    }
}
