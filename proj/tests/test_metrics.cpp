#include <doctest.h>

#include <cmath>

#include "expjac/diffops.hpp"
#include "expjac/metrics.hpp"
#include "expjac/synth.hpp"
#include "oracles.hpp"

using namespace expjac;

namespace {

LabelVolume labels_from(const GridShape& s, const std::vector<std::size_t>& ones, const std::vector<std::size_t>& twos)
{
    std::vector<std::int32_t> l(s.voxel_count(), 0);
    for (const auto q : ones) l[q] = 1;
    for (const auto q : twos) l[q] = 2;
    return LabelVolume(s, l, {1, 2});
}

LabelVolume random_labels(const GridShape& s, int k)
{
    std::vector<std::int32_t> l(s.voxel_count());
    std::vector<std::int32_t> ids;
    for (int i = 1; i <= k; ++i) ids.push_back(i);
    for (auto& x : l) x = static_cast<std::int32_t>(oracle::uniform(0.0, k + 1.0));
    return LabelVolume(s, l, ids);
}

// Brute-force NPJ counts from the oracle Jacobian and cofactor determinant.
std::pair<std::size_t, std::size_t> brute_npj(const DisplacementField& phi)
{
    const std::size_t d = phi.rank();
    std::size_t disp = 0, trans = 0;
    for (std::size_t q = 0; q < phi.shape().voxel_count(); ++q) {
        auto m = oracle::jacobian_at(phi, q);
        disp += oracle::det(m.data(), d) <= 0.0;
        for (std::size_t i = 0; i < d; ++i) m[i * d + i] += 1.0;
        trans += oracle::det(m.data(), d) <= 0.0;
    }
    return {disp, trans};
}

} // namespace

TEST_CASE("dice on identical, disjoint and hand-counted volumes")
{
    const GridShape s({4, 4, 4});
    const LabelVolume a = random_labels(s, 3);
    for (const std::int32_t id : {1, 2, 3}) CHECK(dice(a, a, id) == 1.0);

    const LabelVolume x = labels_from(s, {0, 1, 2, 3}, {});
    const LabelVolume y = labels_from(s, {10, 11, 12, 13}, {});
    CHECK(dice(x, y, 1) == 0.0);

    const LabelVolume p = labels_from(s, {0, 1, 2, 3}, {});
    const LabelVolume r = labels_from(s, {2, 3, 4, 5}, {});
    CHECK(dice(p, r, 1) == 0.5);
    CHECK(dice(r, p, 1) == 0.5);
}

TEST_CASE("dice conventions and errors")
{
    const GridShape s({3, 3});
    const LabelVolume a = labels_from(s, {0}, {});
    const LabelVolume empty = labels_from(s, {}, {});
    CHECK(dice(empty, empty, 2) == 1.0);
    CHECK(dice(a, empty, 1) == 0.0);
    try {
        dice(a, a, 9);
        FAIL("expected UnknownStructure");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::UnknownStructure);
    }
    try {
        dice(a, labels_from(GridShape({3, 4}), {0}, {}), 1);
        FAIL("expected ShapeMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ShapeMismatch);
    }
}

TEST_CASE("dice is symmetric and invariant under relabelling")
{
    const GridShape s({6, 5, 4});
    for (int trial = 0; trial < 20; ++trial) {
        const LabelVolume a = random_labels(s, 3);
        const LabelVolume b = random_labels(s, 3);
        // Permute ids 1 -> 7, 2 -> 5, 3 -> 1 in both volumes.
        auto relabel = [&](const LabelVolume& v) {
            std::vector<std::int32_t> l(v.labels().begin(), v.labels().end());
            for (auto& x : l) x = x == 1 ? 7 : x == 2 ? 5 : x == 3 ? 1 : 0;
            return LabelVolume(s, l, {1, 5, 7});
        };
        const LabelVolume ra = relabel(a), rb = relabel(b);
        CHECK(dice(a, b, 1) == dice(b, a, 1));
        CHECK(dice(a, b, 1) == dice(ra, rb, 7));
        CHECK(dice(a, b, 2) == dice(ra, rb, 5));
        CHECK(dice(a, b, 3) == dice(ra, rb, 1));
        const double v = dice(a, b, 2);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("npj of the zero field depends on the convention")
{
    const NpjPercentages n = npj_percentages(DisplacementField(GridShape({5, 5, 5})));
    CHECK(n.transform_pct == 0.0);
    CHECK(n.displacement_pct == 100.0);
    CHECK(n.voxels == 125);
}

TEST_CASE("linear field with a reflecting transform folds everywhere")
{
    Eigen::Matrix3d a;
    a << -2.5, 0.1, 0.0, 0.2, -0.5, 0.0, 0.0, -0.1, 0.4;
    REQUIRE((Eigen::Matrix3d::Identity() + a).determinant() < 0.0);
    REQUIRE(a.determinant() > 0.0);
    const NpjPercentages n = npj_percentages(linear_field(GridShape({6, 5, 7}), a));
    CHECK(n.transform_pct == 100.0);
    CHECK(n.displacement_pct == 0.0);
}

TEST_CASE("npj matches brute-force determinants")
{
    for (const double ratio : {0.5, 1.5, 2.0, 3.0}) {
        const GridShape s({32, 32, 32});
        const FoldField f = sinusoidal_fold(s, fold_amplitude_for_ratio(s, ratio, 2.0), 2.0);
        const auto [disp, trans] = brute_npj(f.field);
        const NpjPercentages n = npj_percentages(f.field);
        CHECK(n.displacement_count == disp);
        CHECK(n.transform_count == trans);
    }
    for (int trial = 0; trial < 5; ++trial) {
        const DisplacementField phi = oracle::random_field(GridShape({7, 8, 6}), 1.0);
        const auto [disp, trans] = brute_npj(phi);
        const NpjPercentages n = npj_percentages(phi);
        CHECK(n.displacement_count == disp);
        CHECK(n.transform_count == trans);
        const DisplacementField phi2 = oracle::random_field(GridShape({9, 7}), 1.0);
        const auto [d2, t2] = brute_npj(phi2);
        CHECK(npj_percentages(phi2).transform_count == t2);
        CHECK(npj_percentages(phi2).displacement_count == d2);
    }
}

TEST_CASE("warp by zero is the identity")
{
    const GridShape s({5, 6, 4});
    const ScalarVolume v = oracle::random_volume(s);
    const ScalarVolume w = warp(v, DisplacementField(s));
    for (std::size_t q = 0; q < s.voxel_count(); ++q) CHECK(w[q] == v[q]);
    const LabelVolume l = random_labels(s, 4);
    const LabelVolume wl = warp(l, DisplacementField(s));
    CHECK(std::equal(wl.labels().begin(), wl.labels().end(), l.labels().begin()));
    CHECK(wl.structures() == l.structures());
}

TEST_CASE("integer shifts translate exactly")
{
    const GridShape s({8, 7, 6});
    const ScalarVolume v = oracle::random_volume(s);
    const LabelVolume l = random_labels(s, 3);
    DisplacementField phi(s);
    for (std::size_t q = 0; q < s.voxel_count(); ++q) {
        phi.component(0)[q] = 2.0;
        phi.component(1)[q] = -1.0;
    }
    const ScalarVolume w = warp(v, phi);
    const LabelVolume wl = warp(l, phi);
    for (std::size_t q = 0; q < s.voxel_count(); ++q) {
        const Coord c = s.coords(q);
        if (c[0] + 2 >= 8 || c[1] < 1) continue;
        const std::size_t src = s.linear({c[0] + 2, c[1] - 1, c[2]});
        CHECK(w[q] == v[src]);
        CHECK(wl[q] == l[src]);
    }
}

TEST_CASE("warping a linear ramp is exact and a quadratic converges at second order")
{
    auto run = [](std::size_t n, bool quadratic) {
        const double h = 1.0 / static_cast<double>(n - 1);
        const GridShape s({n, n}, {h, h});
        auto f = [&](double x, double y) { return quadratic ? x * x + 0.5 * x * y : 2.0 * x - 3.0 * y + 1.0; };
        ScalarVolume img(s);
        DisplacementField phi(s);
        for (std::size_t q = 0; q < s.voxel_count(); ++q) {
            const Coord c = s.coords(q);
            const double x = c[0] * h, y = c[1] * h;
            img[q] = f(x, y);
            // Smooth displacement of at most 0.1 in physical units.
            phi.component(0)[q] = 0.1 * std::sin(M_PI * x) * std::sin(M_PI * y) / h;
            phi.component(1)[q] = 0.05 * std::sin(2 * M_PI * x) * y * (1 - y) / h;
        }
        const ScalarVolume w = warp(img, phi);
        double err = 0.0;
        for (std::size_t q = 0; q < s.voxel_count(); ++q) {
            const Coord c = s.coords(q);
            const double x = (c[0] + phi.component(0)[q]) * h;
            const double y = (c[1] + phi.component(1)[q]) * h;
            err = std::max(err, std::abs(w[q] - f(x, y)));
        }
        return err;
    };
    CHECK(run(17, false) <= 1e-12);
    const double e17 = run(17, true), e33 = run(33, true);
    MESSAGE("quadratic warp error 17^2: " << e17 << ", 33^2: " << e33);
    CHECK(e17 / e33 >= 3.5);
}

TEST_CASE("warp gradient matches finite differences")
{
    const GridShape s({9, 8});
    const ScalarVolume img = oracle::random_volume(s);
    DisplacementField phi = oracle::random_field(s, 2.0);
    const WarpWithGradient wg = warp_with_gradient(img, phi);
    for (std::size_t q = 0; q < s.voxel_count(); ++q) {
        for (std::size_t a = 0; a < 2; ++a) {
            const double base = phi.component(a)[q];
            auto at = [&](double e) {
                phi.component(a)[q] = base + e;
                const double v = warp(img, phi)[q];
                phi.component(a)[q] = base;
                return v;
            };
            const Coord c = s.coords(q);
            const double p = c[a] + base;
            const double frac = p - std::floor(p);
            // Skip samples sitting on a cell face, where the derivative jumps.
            if (frac < 1e-4 || frac > 1 - 1e-4 || p < 1e-4 || p > s.extent(a) - 1 - 1e-4) continue;
            CHECK(wg.gradient[a][q] == doctest::Approx(oracle::directional_fd(at, 1e-6)).epsilon(1e-6).scale(1.0));
        }
    }
}

TEST_CASE("evaluate")
{
    const GridShape s({6, 6, 6});
    SUBCASE("zero phi_p on identical labels")
    {
        const LabelVolume l = random_labels(s, 2);
        const MetricsReport r = evaluate(l, l, DisplacementField(s), nullptr, {});
        CHECK(r.mean_dice == 1.0);
        CHECK(r.npj_transform_pct == 0.0);
        CHECK_FALSE(r.input_npj_transform_pct.has_value());
        for (const char* k : {"warp", "dice", "npj"}) CHECK(r.timings.count(k) == 1);
    }
    SUBCASE("report composes the per-op results")
    {
        const LabelVolume f = random_labels(s, 2);
        const LabelVolume m = random_labels(s, 2);
        const DisplacementField phi_p = oracle::random_field(s, 1.0);
        const DisplacementField phi = oracle::random_field(s, 1.0);
        const MetricsReport r = evaluate(f, m, phi_p, &phi, {1, 2});
        const LabelVolume wm = warp(m, phi_p);
        CHECK(r.dice_per_structure.at(1) == dice(f, wm, 1));
        CHECK(r.dice_per_structure.at(2) == dice(f, wm, 2));
        CHECK(r.mean_dice == doctest::Approx((dice(f, wm, 1) + dice(f, wm, 2)) / 2.0));
        const auto [pd, pt] = brute_npj(phi_p);
        CHECK(r.npj_transform_pct == doctest::Approx(100.0 * pt / 216.0));
        CHECK(r.npj_displacement_pct == doctest::Approx(100.0 * pd / 216.0));
        const auto [id, it] = brute_npj(phi);
        CHECK(*r.input_npj_transform_pct == doctest::Approx(100.0 * it / 216.0));
        CHECK(*r.input_npj_displacement_pct == doctest::Approx(100.0 * id / 216.0));

        const MetricsReport one = evaluate(f, m, phi_p, &phi, {2});
        CHECK(one.dice_per_structure.size() == 1);
        CHECK(one.mean_dice == r.dice_per_structure.at(2));

        const nlohmann::json j = r.to_json();
        for (const char* k : {"dice_per_structure", "mean_dice", "npj_displacement_pct", "npj_transform_pct",
                              "input_npj_displacement_pct", "input_npj_transform_pct", "stencil", "timings"}) {
            CHECK(j.contains(k));
        }
        CHECK(j["dice_per_structure"].contains("1"));
        CHECK(j["stencil"]["interior"] == "central");
    }
    SUBCASE("shape mismatch")
    {
        const LabelVolume l = random_labels(s, 2);
        CHECK_THROWS_AS(evaluate(l, l, DisplacementField(GridShape({6, 6, 5})), nullptr, {}), Error);
    }
}
