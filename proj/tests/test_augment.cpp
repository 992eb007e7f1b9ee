#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "hsicl/augment.hpp"
#include "hsicl/error.hpp"

using namespace hsicl;
using namespace hsicl::augment;
using testutil::random_volume;

namespace {

std::vector<double> band_sums(const Volume& v) {
    std::vector<double> s;
    for (std::size_t b = 0; b < v.bands; ++b) s.push_back(std::accumulate(v.band(b).begin(), v.band(b).end(), 0.0));
    return s;
}

AugmentSpec spec(OpKind op, std::map<std::string, double> params = {}) { return AugmentSpec{op, std::move(params)}; }

}  // namespace

TEST_CASE("every operator preserves shape") {
    const auto v = random_volume(16, 6, 6, 1);
    for (OpKind op : all_ops()) {
        Rng rng(3);
        CAPTURE(op_name(op));
        CHECK(apply_spec(v, spec(op), rng).same_shape(v));
    }
}

TEST_CASE("operator names round-trip") {
    CHECK(all_ops().size() == 12);
    for (OpKind op : all_ops()) CHECK(parse_op(op_name(op)) == op);
    CHECK_THROWS_AS(parse_op("no-such-op"), ParameterError);
}

TEST_CASE("spectral_shift") {
    const auto v = random_volume(224, 3, 3, 2);
    CHECK(spectral_shift(v, 0) == v);

    auto s = spectral_shift(v, 3);
    for (std::size_t b = 3; b < 224; ++b)
        CHECK(std::ranges::equal(s.band(b), v.band(b - 3)));
    for (std::size_t b = 0; b < 3; ++b) CHECK(std::ranges::equal(s.band(b), v.band(0)));

    auto back = spectral_shift(spectral_shift(v, 5), -5);
    for (std::size_t b = 5; b + 5 < 224; ++b) CHECK(std::ranges::equal(back.band(b), v.band(b)));

    CHECK_THROWS_AS(spectral_shift(v, 224), ParameterError);
    CHECK_THROWS_AS(spectral_shift(v, -224), ParameterError);
}

TEST_CASE("spectral_flip") {
    const auto v = random_volume(11, 4, 4, 3);
    CHECK(spectral_flip(spectral_flip(v)) == v);
    const auto single = random_volume(1, 4, 4, 3);
    CHECK(spectral_flip(single) == single);

    auto a = band_sums(v), b = band_sums(spectral_flip(v));
    std::ranges::sort(a);
    std::ranges::sort(b);
    CHECK(a == b);
}

TEST_CASE("hapke") {
    SUBCASE("albedo recovery against the scalar formula") {
        const double w = 0.5;
        const double h = 3.0 / (1.0 + 2.0 * std::sqrt(1.0 - w));
        const double r = w / 8.0 * h * h;
        CHECK(hapke_reflectance(w, 1.0, 1.0) == doctest::Approx(r).epsilon(1e-14));
        auto got = hapke_albedo(r, 1.0, 1.0);
        REQUIRE(got.has_value());
        CHECK(std::abs(*got - w) <= 1e-9);
    }
    SUBCASE("nominal geometry round-trips") {
        auto v = random_volume(8, 5, 5, 4, 1e-4, 0.99);
        for (Geometry g : {Geometry{1.0, 1.0}, Geometry{0.7, 0.9}, Geometry{0.3, 0.5}}) {
            auto out = hapke_scatter(v, g, g);
            for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(out.data[i] - v.data[i]) <= 1e-6);
        }
    }
    SUBCASE("near-zero reflectance stays near zero") {
        // Output scales with (mu0 + mu) of the nominal over the new geometry,
        // so the bound needs mu0 + mu >= 0.2 or so; grazing angles amplify it.
        Volume v(2, 2, 2, 0.0);
        for (Geometry g : {Geometry{1.0, 1.0}, Geometry{0.2, 0.9}, Geometry{0.15, 0.15}, Geometry{0.6, 0.3}}) {
            auto out = hapke_scatter(v, {1.0, 1.0}, g);
            for (double x : out.data) CHECK(x <= 1e-5);
        }
    }
}

TEST_CASE("atmospheric compensation") {
    const auto v = random_volume(40, 4, 4, 5);
    Rng rng(1);
    CHECK(atmospheric_compensation(v, 0.0, 0.0, 3, rng) == v);

    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng r(seed);
        auto go = draw_gain_offset(40, 0.2, 0.05, 3, 0.15, r);
        for (double g : go.gain(40)) CHECK(std::abs(g - 1.0) <= 0.2 * 3);
        for (double o : go.offset(40)) CHECK(std::abs(o) <= 0.05 * 3);
    }

    // Hand-evaluate g(b) x + o(b) for a flat spectrum.
    Volume flat(12, 3, 3, 0.4);
    Rng r(9);
    auto go = draw_gain_offset(12, 0.3, 0.02, 2, 0.2, r);
    auto out = apply_gain_offset(flat, go.gain(12), go.offset(12));
    for (std::size_t b = 0; b < 12; ++b) {
        double g = 1.0, o = 0.0;
        const double x = static_cast<double>(b);
        for (const auto& bump : go.gain_bumps)
            g += bump.amplitude * std::exp(-0.5 * std::pow((x - bump.center) / bump.width, 2));
        for (const auto& bump : go.offset_bumps)
            o += bump.amplitude * std::exp(-0.5 * std::pow((x - bump.center) / bump.width, 2));
        for (double y : out.band(b)) CHECK(y == doctest::Approx(g * 0.4 + o).epsilon(1e-12));
    }
}

TEST_CASE("spectral_elastic") {
    const auto v = random_volume(30, 3, 3, 6);
    Rng rng(2);
    CHECK(spectral_elastic(v, 0.0, 3.0, rng) == v);

    Rng r2(4);
    auto d = draw_spectral_displacement(30, 2.5, 3.0, r2);
    double peak = 0.0;
    for (double x : d) peak = std::max(peak, std::abs(x));
    CHECK(std::abs(peak - 2.5) <= 1e-9);

    // Linear interpolation reproduces a ramp wherever b + d(b) stays in range.
    Volume ramp(30, 2, 2);
    for (std::size_t b = 0; b < 30; ++b) std::ranges::fill(ramp.band(b), static_cast<double>(b));
    auto out = resample_spectra(ramp, d);
    for (std::size_t b = 3; b < 27; ++b)
        for (double y : out.band(b)) CHECK(y == doctest::Approx(static_cast<double>(b) + d[b]).epsilon(1e-12));
}

TEST_CASE("band_erasure") {
    const auto v = random_volume(224, 3, 3, 7);
    Rng rng(1);
    CHECK(band_erasure(v, 0.0, rng) == v);
    for (double x : band_erasure(v, 1.0, rng).data) CHECK(x == 0.0);

    std::vector<std::size_t> erased;
    auto out = band_erasure(v, 0.1, rng, &erased);
    CHECK(erased.size() == 22);
    std::size_t zeroed = 0, equal = 0;
    for (std::size_t b = 0; b < 224; ++b) {
        if (std::ranges::all_of(out.band(b), [](double x) { return x == 0.0; })) ++zeroed;
        if (std::ranges::equal(out.band(b), v.band(b))) ++equal;
    }
    CHECK(zeroed == 22);
    CHECK(equal == 202);
    CHECK_THROWS_AS(band_erasure(v, 1.5, rng), ParameterError);
}

TEST_CASE("band_permutation") {
    const auto v = random_volume(13, 4, 4, 8);
    Rng rng(5);
    std::vector<std::size_t> perm;
    auto out = band_permutation(v, rng, &perm);

    std::vector<std::size_t> inverse(perm.size());
    for (std::size_t b = 0; b < perm.size(); ++b) inverse[perm[b]] = b;
    CHECK(permute_bands(out, inverse) == v);

    auto a = band_sums(v), b = band_sums(out);
    std::ranges::sort(a);
    std::ranges::sort(b);
    CHECK(a == b);

    // Two bands: find a seed that swaps them and verify element-wise.
    const auto two = random_volume(2, 3, 3, 9);
    for (std::uint64_t seed = 0;; ++seed) {
        Rng r(seed);
        std::vector<std::size_t> p;
        auto swapped = band_permutation(two, r, &p);
        if (p[0] != 1) continue;
        CHECK(std::ranges::equal(swapped.band(0), two.band(1)));
        CHECK(std::ranges::equal(swapped.band(1), two.band(0)));
        break;
    }
}

TEST_CASE("nn_mixing") {
    const auto v = random_volume(5, 4, 4, 10);
    CHECK(nn_mixing(v, 0.0) == v);

    Volume flat(5, 4, 4);
    for (std::size_t b = 0; b < 5; ++b) std::ranges::fill(flat.band(b), 0.1 * static_cast<double>(b + 1));
    auto out = nn_mixing(flat, 0.8);
    for (std::size_t i = 0; i < flat.size(); ++i) CHECK(out.data[i] == doctest::Approx(flat.data[i]).epsilon(1e-15));

    // 2x2: each pixel has two neighbours, the adjacent row and column.
    Volume q(1, 2, 2);
    q(0, 0, 0) = 1.0;
    q(0, 0, 1) = 2.0;
    q(0, 1, 0) = 4.0;
    q(0, 1, 1) = 8.0;
    auto m = nn_mixing(q, 0.5);
    CHECK(m(0, 0, 0) == doctest::Approx(0.5 * 1.0 + 0.5 * (2.0 + 4.0) / 2.0));
    CHECK(m(0, 0, 1) == doctest::Approx(0.5 * 2.0 + 0.5 * (1.0 + 8.0) / 2.0));
    CHECK(m(0, 1, 0) == doctest::Approx(0.5 * 4.0 + 0.5 * (1.0 + 8.0) / 2.0));
    CHECK(m(0, 1, 1) == doctest::Approx(0.5 * 8.0 + 0.5 * (2.0 + 4.0) / 2.0));

    bool flagged = false;
    const auto pixel = random_volume(5, 1, 1, 11);
    CHECK(nn_mixing(pixel, 0.7, &flagged) == pixel);
    CHECK(flagged);
}

TEST_CASE("spatial_rotate") {
    const auto v = random_volume(3, 5, 5, 12);
    CHECK(spatial_rotate(v, 0) == v);
    auto r = v;
    for (int i = 0; i < 4; ++i) r = spatial_rotate(r, 1);
    CHECK(r == v);
    auto a = v.band(0);
    std::vector<double> s0(a.begin(), a.end()), s1;
    auto rb = spatial_rotate(v, 3);
    s1.assign(rb.band(0).begin(), rb.band(0).end());
    std::ranges::sort(s0);
    std::ranges::sort(s1);
    CHECK(s0 == s1);
}

TEST_CASE("spatial_elastic") {
    const auto v = random_volume(3, 6, 6, 13);
    Rng rng(1);
    CHECK(spatial_elastic(v, 0.0, 1.5, rng) == v);

    // Probe bands encode the row and column coordinates; a copy of the row
    // probe must resample identically, so every band sees the same field.
    Volume probe(3, 6, 6);
    for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t c = 0; c < 6; ++c) {
            probe(0, r, c) = static_cast<double>(r);
            probe(1, r, c) = static_cast<double>(c);
            probe(2, r, c) = static_cast<double>(r);
        }
    Rng r2(8);
    auto out = spatial_elastic(probe, 1.0, 1.5, r2);
    CHECK(std::ranges::equal(out.band(0), out.band(2)));

    // Bilinear sampling is exact on an affine image f(u, v) = u + 2v.
    Volume plane(1, 8, 8);
    for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t c = 0; c < 8; ++c) plane(0, r, c) = static_cast<double>(r) + 2.0 * static_cast<double>(c);
    Rng r3(21);
    auto field = draw_displacement_field(8, 8, 0.9, 1.5, r3);
    auto warped = apply_displacement(plane, field);
    for (std::size_t r = 1; r < 7; ++r)
        for (std::size_t c = 1; c < 7; ++c) {
            const std::size_t i = r * 8 + c;
            const double expect = static_cast<double>(r) + field.dy[i] + 2.0 * (static_cast<double>(c) + field.dx[i]);
            CHECK(std::abs(warped(0, r, c) - expect) <= 1e-9);
        }
}

TEST_CASE("spatial_flip") {
    const auto v = random_volume(4, 5, 3, 14);
    for (Axis axis : {Axis::Horizontal, Axis::Vertical}) {
        CHECK(spatial_flip(spatial_flip(v, axis), axis) == v);
        auto sums = band_sums(spatial_flip(v, axis)), orig = band_sums(v);
        for (std::size_t b = 0; b < 4; ++b) CHECK(sums[b] == doctest::Approx(orig[b]).epsilon(1e-15));
    }
    const auto pixel = random_volume(4, 1, 1, 15);
    CHECK(spatial_flip(pixel, Axis::Horizontal) == pixel);
    CHECK(spatial_flip(v, Axis::Horizontal)(0, 0, 0) == v(0, 0, 2));
    CHECK(spatial_flip(v, Axis::Vertical)(0, 0, 0) == v(0, 4, 0));
}

TEST_CASE("spatial_translate") {
    const auto v = random_volume(2, 6, 6, 16);
    CHECK(spatial_translate(v, 0, 0) == v);

    auto t = spatial_translate(v, 1, 0);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t r = 0; r < 6; ++r)
            for (std::size_t c = 1; c < 6; ++c) CHECK(t(b, r, c) == v(b, r, c - 1));

    auto back = spatial_translate(spatial_translate(v, 2, 1), -2, -1);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t r = 1; r < 5; ++r)
            for (std::size_t c = 2; c < 4; ++c) CHECK(back(b, r, c) == v(b, r, c));

    CHECK_THROWS_AS(spatial_translate(v, 6, 0), ParameterError);
    CHECK_THROWS_AS(spatial_translate(v, 0, -6), ParameterError);
}

TEST_CASE("spec validation") {
    CHECK_NOTHROW(spec(OpKind::BandErasure, {{"fraction", 0.3}}).validate());
    CHECK_THROWS_AS(spec(OpKind::BandErasure, {{"fraction", 1.3}}).validate(), ParameterError);
    CHECK_THROWS_AS(spec(OpKind::BandErasure, {{"amount", 0.3}}).validate(), ParameterError);
    CHECK_THROWS_AS(spec(OpKind::Atmospheric, {{"gain_amp", 0.6}}).validate(), ParameterError);
    for (OpKind op : all_ops())
        for (const auto& info : describe_params(op)) CHECK(info.default_value >= info.min);
}

TEST_CASE("pipelines") {
    Patch p{random_volume(10, 5, 5, 17), 2, 3, LabelVector{{0.2, 0.8}}};

    SUBCASE("identity-parameter pipeline returns the input") {
        auto pipe = AugmentPipeline::fixed({spec(OpKind::SpectralShift, {{"fixed", 1}, {"delta", 0}}),
                                            spec(OpKind::BandErasure, {{"fraction", 0}}),
                                            spec(OpKind::Rotate, {{"turns", 0}}),
                                            spec(OpKind::SpatialElastic, {{"amplitude", 0}}),
                                            spec(OpKind::NnMixing, {{"lambda_max", 0}})},
                                           5);
        CHECK(apply_pipeline(p, pipe, 0) == p);
    }
    SUBCASE("deterministic for a fixed seed and sample") {
        auto pipe = AugmentPipeline::fixed({spec(OpKind::SpatialFlip, {{"axis", 0}}), spec(OpKind::SpectralFlip)}, 9);
        CHECK(apply_pipeline(p, pipe, 4) == apply_pipeline(p, pipe, 4));

        AugmentPipeline random;
        random.master_seed = 3;
        random.stages.push_back({{spec(OpKind::Rotate), spec(OpKind::SpatialElastic), spec(OpKind::Translate)}});
        random.stages.push_back({{spec(OpKind::Hapke), spec(OpKind::Atmospheric), spec(OpKind::SpectralElastic)}});
        for (std::uint64_t n = 0; n < 10; ++n) CHECK(apply_pipeline(p, random, n) == apply_pipeline(p, random, n));
    }
    SUBCASE("label and origin are untouched") {
        auto pipe = AugmentPipeline::fixed({spec(OpKind::Translate), spec(OpKind::Atmospheric)}, 2);
        auto out = apply_pipeline(p, pipe, 1);
        CHECK(out.label == p.label);
        CHECK(out.origin_row == 2);
        CHECK(out.origin_col == 3);
    }
    SUBCASE("rotation and band permutation commute") {
        // Each stage draws from hash(seed, sample, stage), so reordering the
        // pipeline changes which stream the permutation comes from. Record the
        // permutation each order draws and compose the other way by hand.
        const std::uint64_t seed = 11, sample = 6;
        auto rot_then_perm = AugmentPipeline::fixed({spec(OpKind::Rotate, {{"turns", 1}}), spec(OpKind::BandPermutation)}, seed);
        auto perm_then_rot = AugmentPipeline::fixed({spec(OpKind::BandPermutation), spec(OpKind::Rotate, {{"turns", 1}})}, seed);

        std::vector<std::size_t> perm_a, perm_b;
        Rng ra = stage_rng(seed, sample, 1), rb = stage_rng(seed, sample, 0);
        band_permutation(p.data, ra, &perm_a);
        band_permutation(p.data, rb, &perm_b);

        CHECK(apply_pipeline(p.data, rot_then_perm, sample) == spatial_rotate(permute_bands(p.data, perm_a), 1));
        CHECK(apply_pipeline(p.data, perm_then_rot, sample) == permute_bands(spatial_rotate(p.data, 1), perm_b));
        CHECK(permute_bands(spatial_rotate(p.data, 1), perm_a) == spatial_rotate(permute_bands(p.data, perm_a), 1));
    }
    SUBCASE("samples are independent of evaluation order") {
        AugmentPipeline pipe;
        pipe.master_seed = 8;
        pipe.stages.push_back({{spec(OpKind::Translate), spec(OpKind::Rotate)}});
        pipe.stages.push_back({{spec(OpKind::BandErasure), spec(OpKind::SpectralShift)}});
        std::vector<Volume> forward, reverse(6);
        for (std::uint64_t n = 0; n < 6; ++n) forward.push_back(apply_pipeline(p.data, pipe, n));
        for (std::uint64_t n = 6; n-- > 0;) reverse[n] = apply_pipeline(p.data, pipe, n);
        CHECK(forward == reverse);
    }
}
