#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <thread>

#include "expjac/diffops.hpp"
#include "expjac/poisson.hpp"
#include "oracles.hpp"

using namespace expjac;

namespace {

constexpr double kPi = std::numbers::pi;

// sin(i l pi / (N + 1)) products with one-based voxel index i = c + 1 and
// one-based mode l.
ScalarVolume basis_mode(const GridShape& s, const Coord& mode_one_based)
{
    ScalarVolume u(s);
    for (std::size_t q = 0; q < s.voxel_count(); ++q) {
        const Coord c = s.coords(q);
        double v = 1.0;
        for (std::size_t a = 0; a < s.rank(); ++a) {
            v *= std::sin((c[a] + 1.0) * mode_one_based[a] * kPi / (s.extent(a) + 1.0));
        }
        u[q] = v;
    }
    return u;
}

double max_abs(std::span<const double> v)
{
    double m = 0.0;
    for (const double x : v) m = std::max(m, std::abs(x));
    return m;
}

double inner(const ScalarVolume& a, const ScalarVolume& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double residual(const ScalarVolume& f, const ScalarVolume& u)
{
    const ScalarVolume lu = discrete_laplacian(u);
    double m = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) m = std::max(m, std::abs(lu[i] - f[i]));
    return m / max_abs(f.values());
}

} // namespace

TEST_CASE("eigenvalue cache")
{
    const GridShape s({5, 7, 3});
    const EigenvalueCache cache(s);
    for (std::size_t a = 0; a < 3; ++a) {
        const auto ax = cache.axis(a);
        REQUIRE(ax.size() == s.extent(a));
        for (std::size_t l = 0; l < ax.size(); ++l) {
            CHECK(ax[l] == doctest::Approx(2.0 - 2.0 * std::cos((l + 1.0) * kPi / (s.extent(a) + 1.0))));
            CHECK(ax[l] > 0.0);
            if (l > 0) CHECK(ax[l] > ax[l - 1]);
        }
    }
    CHECK(cache.lambda({1, 2, 0}) == doctest::Approx(cache.axis(0)[1] + cache.axis(1)[2] + cache.axis(2)[0]));
}

TEST_CASE("fast DST-I agrees with the direct sum")
{
    for (std::size_t n : {1u, 2u, 3u, 4u, 5u, 8u, 13u, 32u, 63u}) {
        const GridShape s({n, 3});
        const DstPlan plan(s);
        const ScalarVolume u = oracle::random_volume(s);
        std::vector<double> fast(u.values().begin(), u.values().end());
        plan.transform(fast);
        // Reference: direct sums along axis 1, then axis 0, written out here.
        std::vector<double> ref(u.size(), 0.0);
        for (std::size_t k0 = 0; k0 < n; ++k0) {
            for (std::size_t k1 = 0; k1 < 3; ++k1) {
                double acc = 0.0;
                for (std::size_t j0 = 0; j0 < n; ++j0) {
                    for (std::size_t j1 = 0; j1 < 3; ++j1) {
                        acc += u.at({j0, j1, 0}) * std::sin((j0 + 1.0) * (k0 + 1.0) * kPi / (n + 1.0)) *
                               std::sin((j1 + 1.0) * (k1 + 1.0) * kPi / 4.0);
                    }
                }
                ref[k0 * 3 + k1] = acc;
            }
        }
        const double scale = max_abs(ref);
        for (std::size_t i = 0; i < ref.size(); ++i) {
            CHECK(std::abs(fast[i] - ref[i]) <= 1e-12 * scale);
        }
        std::vector<double> line(n), direct(n), via_plan(n);
        for (auto& x : line) x = oracle::uniform(-1, 1);
        dst1_direct(line, direct);
        const DstPlan line_plan(GridShape({n, 1}));
        via_plan = line;
        line_plan.transform(via_plan);
        for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(via_plan[i] - direct[i]) <= 1e-12 * max_abs(direct));
    }
}

TEST_CASE("single basis mode has one unit coefficient")
{
    const GridShape s({6, 5, 7});
    const DstPlan plan(s);
    const SpectralVolume a = dst_forward(basis_mode(s, {2, 3, 1}), plan);
    for (std::size_t q = 0; q < s.voxel_count(); ++q) {
        const Coord m = s.coords(q);
        const double expect = m == Coord{1, 2, 0} ? 1.0 : 0.0;
        CHECK(a.expansion_coefficient(m) == doctest::Approx(expect).epsilon(1e-13).scale(1.0));
    }
}

TEST_CASE("inverse of a unit coefficient is the sampled mode")
{
    const GridShape s({4, 6, 5});
    const DstPlan plan(s);
    SpectralVolume a{s, std::vector<double>(s.voxel_count(), 0.0), plan.inverse_scale()};
    a.coeffs[0] = 1.0 / plan.inverse_scale();
    const ScalarVolume u = dst_inverse(a, plan);
    const ScalarVolume ref = basis_mode(s, {1, 1, 1});
    for (std::size_t q = 0; q < s.voxel_count(); ++q) CHECK(u[q] == doctest::Approx(ref[q]).epsilon(1e-13).scale(1.0));
}

TEST_CASE("round trip, linearity and zero")
{
    const GridShape s({16, 16, 16});
    const DstPlan plan(s);
    const ScalarVolume u = oracle::random_volume(s);
    const ScalarVolume back = dst_inverse(dst_forward(u, plan), plan);
    for (std::size_t q = 0; q < u.size(); ++q) CHECK(std::abs(back[q] - u[q]) <= 1e-12);

    SpectralVolume a = dst_forward(oracle::random_volume(s), plan);
    SpectralVolume b = dst_forward(oracle::random_volume(s), plan);
    SpectralVolume ab = a;
    for (std::size_t i = 0; i < ab.coeffs.size(); ++i) ab.coeffs[i] += b.coeffs[i];
    const ScalarVolume lhs = dst_inverse(ab, plan);
    const ScalarVolume ra = dst_inverse(a, plan);
    const ScalarVolume rb = dst_inverse(b, plan);
    for (std::size_t q = 0; q < lhs.size(); ++q) CHECK(std::abs(lhs[q] - ra[q] - rb[q]) <= 1e-13);

    const SpectralVolume z = dst_forward(ScalarVolume(s), plan);
    for (const double c : z.coeffs) CHECK(c == 0.0);
}

TEST_CASE("plan mismatch and non-finite input")
{
    const DstPlan plan(GridShape({5, 5, 5}));
    try {
        solve_poisson(ScalarVolume(GridShape({5, 5, 6})), plan);
        FAIL("expected PlanMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::PlanMismatch);
    }
    CHECK_THROWS_AS(dst_forward(ScalarVolume(GridShape({5, 5})), plan), Error);
    ScalarVolume f(GridShape({5, 5, 5}));
    f[7] = std::numeric_limits<double>::quiet_NaN();
    try {
        solve_poisson(f, plan);
        FAIL("expected NonFiniteInput");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NonFiniteInput);
    }
}

TEST_CASE("solving for -lambda times a mode returns the mode")
{
    const GridShape s({7, 6, 5});
    const DstPlan plan(s);
    for (const Coord mode : {Coord{1, 1, 1}, Coord{3, 2, 5}, Coord{7, 6, 5}}) {
        const ScalarVolume u = basis_mode(s, mode);
        const double lambda = plan.eigenvalues().lambda({mode[0] - 1, mode[1] - 1, mode[2] - 1});
        ScalarVolume f(s);
        for (std::size_t q = 0; q < s.voxel_count(); ++q) f[q] = -lambda * u[q];
        const ScalarVolume got = solve_poisson(f, plan);
        for (std::size_t q = 0; q < s.voxel_count(); ++q) CHECK(std::abs(got[q] - u[q]) <= 1e-12);
    }
    const ScalarVolume zero = solve_poisson(ScalarVolume(s), plan);
    for (const double x : zero.values()) CHECK(x == 0.0);
}

TEST_CASE("residual on random right-hand sides")
{
    for (const GridShape& s : {GridShape({24, 24, 24}), GridShape({3, 9, 4}), GridShape({17, 30}), GridShape({1, 5, 2})}) {
        const DstPlan plan(s);
        for (int trial = 0; trial < 3; ++trial) {
            const ScalarVolume f = oracle::random_volume(s);
            CHECK(residual(f, solve_poisson(f, plan)) <= 1e-10);
        }
    }
}

TEST_CASE("solve is self-adjoint and its vjp matches finite differences")
{
    const GridShape s({9, 8, 7});
    const DstPlan plan(s);
    const ScalarVolume f = oracle::random_volume(s);
    const ScalarVolume g = oracle::random_volume(s);
    const double lhs = inner(solve_poisson(f, plan), g);
    const double rhs = inner(f, solve_poisson_vjp(g, plan));
    CHECK(std::abs(lhs - rhs) <= 1e-10 * std::abs(lhs));

    const ScalarVolume zero = solve_poisson_vjp(ScalarVolume(s), plan);
    for (const double x : zero.values()) CHECK(x == 0.0);

    const ScalarVolume grad = solve_poisson_vjp(g, plan);
    for (std::size_t q : {0u, 17u, 250u, 503u}) {
        auto obj = [&](double eps) {
            ScalarVolume fp = f;
            fp[q] += eps;
            return inner(solve_poisson(fp, plan), g);
        };
        const double fd = oracle::directional_fd(obj, 1e-4);
        CHECK(std::abs(fd - grad[q]) <= 1e-6 * std::max(1.0, std::abs(grad[q])));
    }
}

TEST_CASE("a shared plan is safe under concurrent solves")
{
    const GridShape s({12, 10, 14});
    const DstPlan plan(s);
    std::vector<ScalarVolume> rhs, serial, parallel(4);
    for (int i = 0; i < 4; ++i) {
        rhs.push_back(oracle::random_volume(s));
        serial.push_back(solve_poisson(rhs.back(), plan));
    }
    std::vector<std::thread> threads;
    for (int i = 0; i < 4; ++i) {
        threads.emplace_back([&, i] {
            for (int rep = 0; rep < 20; ++rep) parallel[i] = solve_poisson(rhs[i], plan);
        });
    }
    for (auto& t : threads) t.join();
    for (int i = 0; i < 4; ++i) {
        for (std::size_t q = 0; q < s.voxel_count(); ++q) CHECK(parallel[i][q] == serial[i][q]);
    }
}
