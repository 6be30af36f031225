#include <doctest.h>

#include <cmath>
#include <limits>

#include "expjac/diffops.hpp"
#include "expjac/matexp.hpp"
#include "expjac/metrics.hpp"
#include "expjac/postprocess.hpp"
#include "expjac/synth.hpp"
#include "oracles.hpp"

using namespace expjac;

namespace {

double inner(const DisplacementField& a, const DisplacementField& b)
{
    double s = 0.0;
    for (std::size_t t = 0; t < a.rank(); ++t) {
        const auto x = a.component(t);
        const auto y = b.component(t);
        for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    }
    return s;
}

DisplacementField axpy(const DisplacementField& x, double a, const DisplacementField& v)
{
    DisplacementField out = x;
    for (std::size_t t = 0; t < x.rank(); ++t) {
        auto o = out.component(t);
        const auto w = v.component(t);
        for (std::size_t i = 0; i < o.size(); ++i) o[i] += a * w[i];
    }
    return out;
}

// Naive sum over voxels of ||expm(Jac phi) - Jac phi_p||_F^2 with every
// ingredient recomputed by the oracles.
double naive_loss(const DisplacementField& phi, const DisplacementField& phi_p)
{
    const std::size_t d = phi.rank();
    double total = 0.0;
    for (std::size_t q = 0; q < phi.shape().voxel_count(); ++q) {
        const auto j = oracle::jacobian_at(phi, q);
        const auto jp = oracle::jacobian_at(phi_p, q);
        Eigen::MatrixXd a(d, d);
        for (std::size_t r = 0; r < d; ++r) {
            for (std::size_t c = 0; c < d; ++c) a(r, c) = j[r * d + c];
        }
        const Eigen::MatrixXd e = oracle::expm_reference(a);
        for (std::size_t r = 0; r < d; ++r) {
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = e(r, c) - jp[r * d + c];
                total += diff * diff;
            }
        }
    }
    return total;
}

bool boundary_is_zero(const DisplacementField& f)
{
    for (std::size_t q = 0; q < f.shape().voxel_count(); ++q) {
        if (!f.shape().on_boundary(f.shape().coords(q))) continue;
        for (std::size_t t = 0; t < f.rank(); ++t) {
            if (f.component(t)[q] != 0.0) return false;
        }
    }
    return true;
}

// Zero-boundary field with random interior values.
DisplacementField random_zero_boundary(const GridShape& s, double amplitude)
{
    DisplacementField f = oracle::random_field(s, amplitude);
    for (std::size_t q = 0; q < s.voxel_count(); ++q) {
        if (s.on_boundary(s.coords(q))) {
            for (std::size_t t = 0; t < f.rank(); ++t) f.component(t)[q] = 0.0;
        }
    }
    f.set_zero_boundary(true);
    return f;
}

} // namespace

TEST_CASE("pairwise sum")
{
    std::vector<double> v(1000);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
    CHECK(pairwise_sum(v) == 499500.0);
    CHECK(pairwise_sum(std::vector<double>{}) == 0.0);
}

TEST_CASE("interior extraction and embedding")
{
    const GridShape s({5, 4, 6});
    const ScalarVolume v = oracle::random_volume(s);
    const ScalarVolume inner_v = extract_interior(v);
    CHECK(inner_v.shape().dims() == std::vector<std::size_t>{3, 2, 4});
    const ScalarVolume back = embed_interior(inner_v, s);
    for (std::size_t q = 0; q < s.voxel_count(); ++q) {
        const Coord c = s.coords(q);
        CHECK(back[q] == (s.on_boundary(c) ? 0.0 : v[q]));
    }
}

TEST_CASE("zero field")
{
    for (const GridShape& s : {GridShape({6, 7, 5}), GridShape({8, 9})}) {
        const LayerOutput out = postprocess(DisplacementField(s));
        for (std::size_t t = 0; t < s.rank(); ++t) {
            for (const double x : out.phi_p.component(t)) CHECK(x == 0.0);
        }
        CHECK(out.loss_p == static_cast<double>(s.rank() * s.voxel_count()));
        CHECK(out.phi_p.zero_boundary());
        CHECK(loss_p(DisplacementField(s), DisplacementField(s)) == static_cast<double>(s.rank() * s.voxel_count()));
    }
}

TEST_CASE("boundary contract, precision and intermediates")
{
    for (int trial = 0; trial < 10; ++trial) {
        const GridShape s = trial % 2 ? GridShape({5, 6, 7}) : GridShape({9, 6});
        const DisplacementField phi = oracle::random_field(s, 1.5);
        PostprocessConfig cfg;
        cfg.record_intermediates = trial == 0;
        const LayerOutput out = postprocess(phi, cfg);
        CHECK(boundary_is_zero(out.phi_p));
        CHECK(validate(out.phi_p).empty());
        CHECK(out.loss_p >= 0.0);
        CHECK(out.j_prime.has_value() == (trial == 0));
        for (const char* stage : {"jacobian", "expm", "divergence", "poisson", "loss", "total"}) {
            CHECK(out.timings.count(stage) == 1);
        }
    }
    const DisplacementField f32 = oracle::random_field(GridShape({5, 5, 5}), 1.0).with_precision(Precision::f32);
    const LayerOutput out = postprocess(f32);
    CHECK(out.phi_p.precision() == Precision::f32);
    CHECK(out.phi_p == out.phi_p.with_precision(Precision::f32));
}

TEST_CASE("invalid inputs are rejected")
{
    try {
        postprocess(DisplacementField(GridShape({2, 5, 5})));
        FAIL("expected ShapeTooSmall");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ShapeTooSmall);
    }
    DisplacementField bad(GridShape({4, 4}));
    bad.component(0)[5] = std::numeric_limits<double>::quiet_NaN();
    try {
        postprocess(bad);
        FAIL("expected NonFiniteInput");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NonFiniteInput);
    }
    CHECK_THROWS_AS(loss_p(DisplacementField(GridShape({4, 4})), DisplacementField(GridShape({4, 5}))), Error);
}

TEST_CASE("loss matches a naive loop")
{
    for (int trial = 0; trial < 3; ++trial) {
        const GridShape s({8, 8, 8});
        const DisplacementField phi = oracle::random_field(s, 0.8);
        const DisplacementField phi_p = oracle::random_field(s, 0.8);
        const double ref = naive_loss(phi, phi_p);
        CHECK(std::abs(loss_p(phi, phi_p) - ref) <= 1e-12 * ref);
        CHECK(loss_p_mean(phi, phi_p) == doctest::Approx(ref / 512.0).epsilon(1e-12));
        const LayerOutput out = postprocess(phi);
        CHECK(out.loss_p == doctest::Approx(naive_loss(phi, out.phi_p)).epsilon(1e-12));
    }
}

TEST_CASE("loss vanishes when the target is reproduced")
{
    const GridShape s({6, 6, 6});
    const DisplacementField phi_p = random_zero_boundary(s, 0.5);
    const JacobianField target = jacobian(phi_p);
    CHECK(reconstruction_loss(target, phi_p) == 0.0);
}

TEST_CASE("reconstruction matches the dense least-squares oracle")
{
    for (const GridShape& s : {GridShape({6, 6, 6}), GridShape({7, 5, 6}), GridShape({9, 8}), GridShape({3, 3, 3})}) {
        JacobianField target(s, s.rank());
        for (auto& x : target.data()) x = oracle::uniform(-2, 2);
        const DisplacementField fast = reconstruct_from_jacobian(target);
        const DisplacementField ref = oracle::least_squares_reconstruction(target);
        for (std::size_t t = 0; t < s.rank(); ++t) {
            for (std::size_t q = 0; q < s.voxel_count(); ++q) {
                CHECK(std::abs(fast.component(t)[q] - ref.component(t)[q]) <= 1e-10);
            }
        }
    }
}

TEST_CASE("reconstruction is exact on integrable targets")
{
    // Build T so that the average of T over every edge equals the forward
    // difference of a zero-boundary field psi; psi is then the exact minimiser.
    for (const GridShape& s : {GridShape({7, 6, 8}), GridShape({10, 9})}) {
        const DisplacementField psi = random_zero_boundary(s, 1.0);
        const std::size_t d = s.rank();
        JacobianField target(s, d);
        for (std::size_t t = 0; t < d; ++t) {
            const auto u = psi.component(t);
            for (std::size_t c = 0; c < d; ++c) {
                for_each_line(s, c, [&](std::size_t off, std::size_t stride, std::size_t n) {
                    double prev = oracle::uniform(-1, 1);
                    target.at(off, t, c) = prev;
                    for (std::size_t i = 1; i < n; ++i) {
                        const double diff = u[off + i * stride] - u[off + (i - 1) * stride];
                        prev = 2.0 * diff - prev;
                        target.at(off + i * stride, t, c) = prev;
                    }
                });
            }
        }
        const DisplacementField got = reconstruct_from_jacobian(target);
        for (std::size_t t = 0; t < d; ++t) {
            for (std::size_t q = 0; q < s.voxel_count(); ++q) {
                CHECK(std::abs(got.component(t)[q] - psi.component(t)[q]) <= 1e-10);
            }
        }
    }
}

TEST_CASE("postprocess of a conservative family keeps curl small")
{
    for (const std::size_t n : {33u, 65u}) {
        const DisplacementField phi = harmonic_conjugate_2d(GridShape({n, n}), HarmonicFamily::z_squared);
        PostprocessConfig cfg;
        cfg.record_intermediates = true;
        const LayerOutput out = postprocess(phi, cfg);
        const auto curls = curl_rows(*out.j_prime);
        double m = 0.0;
        for (std::size_t q = 0; q < phi.shape().voxel_count(); ++q) {
            if (phi.shape().depth(phi.shape().coords(q)) < 2) continue;
            for (const auto& v : curls) m = std::max(m, std::abs(v[q]));
        }
        MESSAGE("max index-space curl of J' at " << n << "^2: " << m);
        CHECK(m < 1e-3);
    }
}

TEST_CASE("vjp with zero upstream is zero")
{
    const GridShape s({5, 6, 5});
    const DisplacementField phi = oracle::random_field(s, 0.5);
    const DisplacementField g = postprocess_vjp(phi, DisplacementField(s), 0.0);
    for (std::size_t t = 0; t < 3; ++t) {
        for (const double x : g.component(t)) CHECK(x == 0.0);
    }
}

TEST_CASE("vjp matches finite differences")
{
    for (int trial = 0; trial < 6; ++trial) {
        const GridShape s = trial % 2 ? GridShape({6, 6, 6}) : GridShape({8, 8});
        const DisplacementField phi = oracle::random_field(s, 0.4);
        const DisplacementField up = oracle::random_field(s, 1.0);
        const double w = trial < 2 ? 0.0 : oracle::uniform(0.1, 1.0);
        auto objective = [&](const DisplacementField& x) {
            const LayerOutput out = postprocess(x);
            return inner(up, out.phi_p) + w * out.loss_p;
        };
        const DisplacementField grad = postprocess_vjp(phi, up, w);
        for (int dir = 0; dir < 3; ++dir) {
            const DisplacementField v = oracle::random_field(s, 1.0);
            const double fd = oracle::directional_fd([&](double h) { return objective(axpy(phi, h, v)); }, 1e-5);
            const double an = inner(grad, v);
            CHECK(std::abs(fd - an) <= 1e-5 * std::abs(fd));
        }
    }
}

TEST_CASE("vjp of the loss at zero matches finite differences")
{
    const GridShape s({6, 6, 6});
    const DisplacementField zero(s);
    const DisplacementField grad = postprocess_vjp(zero, DisplacementField(s), 1.0);
    for (int dir = 0; dir < 4; ++dir) {
        const DisplacementField v = oracle::random_field(s, 1.0);
        const double fd =
            oracle::directional_fd([&](double h) { return postprocess(axpy(zero, h, v)).loss_p; }, 1e-5);
        CHECK(std::abs(fd - inner(grad, v)) <= 1e-5 * std::max(1.0, std::abs(fd)));
    }
}
