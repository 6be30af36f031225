#include "expjac/poisson.hpp"

#include <cmath>
#include <mutex>
#include <numbers>

#include <fftw3.h>

namespace expjac {

namespace {

// Lines at or below this length use dst1_direct.
constexpr std::size_t kDirectMaxLength = 4;

std::mutex& fftw_planner_mutex()
{
    static std::mutex m;
    return m;
}

void require_plan(const GridShape& shape, const DstPlan& plan)
{
    if (!shape.same_extents(plan.shape())) {
        throw Error(ErrorCode::PlanMismatch, "volume " + describe(shape) + " does not match plan " +
                                                 describe(plan.shape()));
    }
}

void require_finite(std::span<const double> values)
{
    for (const double v : values) {
        if (!std::isfinite(v)) {
            throw Error(ErrorCode::NonFiniteInput, "Poisson right-hand side has non-finite values");
        }
    }
}

} // namespace

struct DstPlan::Impl {
    struct Axis {
        std::size_t length = 0;
        fftw_plan plan = nullptr;
    };
    std::vector<Axis> axes;

    ~Impl()
    {
        std::lock_guard lock(fftw_planner_mutex());
        for (auto& a : axes) {
            if (a.plan) {
                fftw_destroy_plan(a.plan);
            }
        }
    }
};

EigenvalueCache::EigenvalueCache(const GridShape& shape)
{
    for (std::size_t a = 0; a < shape.rank(); ++a) {
        const std::size_t n = shape.extent(a);
        std::vector<double> ev(n);
        for (std::size_t l = 1; l <= n; ++l) {
            ev[l - 1] = 2.0 - 2.0 * std::cos(static_cast<double>(l) * std::numbers::pi / static_cast<double>(n + 1));
        }
        per_axis_.push_back(std::move(ev));
    }
}

double EigenvalueCache::lambda(const Coord& mode) const
{
    double sum = 0.0;
    for (std::size_t a = 0; a < per_axis_.size(); ++a) {
        sum += per_axis_[a][mode[a]];
    }
    return sum;
}

void dst1_direct(std::span<const double> in, std::span<double> out)
{
    const std::size_t n = in.size();
    const double step = std::numbers::pi / static_cast<double>(n + 1);
    for (std::size_t k = 0; k < n; ++k) {
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            // Reduce the product modulo 2(N+1) so the sine argument stays small.
            const std::size_t p = ((j + 1) * (k + 1)) % (2 * (n + 1));
            sum += in[j] * std::sin(step * static_cast<double>(p));
        }
        out[k] = sum;
    }
}

DstPlan::DstPlan(const GridShape& shape)
    : shape_(shape), eigen_(std::make_shared<EigenvalueCache>(shape))
{
    auto impl = std::make_shared<Impl>();
    double denom = 1.0;
    for (std::size_t a = 0; a < shape.rank(); ++a) {
        const std::size_t n = shape.extent(a);
        denom *= static_cast<double>(n + 1) / 2.0;
        Impl::Axis axis{n, nullptr};
        if (n > kDirectMaxLength) {
            std::vector<double> in(n), out(n);
            std::lock_guard lock(fftw_planner_mutex());
            axis.plan = fftw_plan_r2r_1d(static_cast<int>(n), in.data(), out.data(), FFTW_RODFT00,
                                         FFTW_ESTIMATE | FFTW_UNALIGNED);
            if (!axis.plan) {
                throw Error(ErrorCode::InvalidArgument, "FFTW could not plan a DST of length " + std::to_string(n));
            }
        }
        impl->axes.push_back(axis);
    }
    inverse_scale_ = 1.0 / denom;
    impl_ = std::move(impl);
}

void DstPlan::transform(std::span<double> data) const
{
    if (data.size() != shape_.voxel_count()) {
        throw Error(ErrorCode::PlanMismatch, "buffer length does not match plan");
    }
    std::vector<double> in, out;
    for (std::size_t a = 0; a < shape_.rank(); ++a) {
        const auto& axis = impl_->axes[a];
        in.resize(axis.length);
        out.resize(axis.length);
        for_each_line(shape_, a, [&](std::size_t off, std::size_t stride, std::size_t n) {
            for (std::size_t i = 0; i < n; ++i) {
                in[i] = data[off + i * stride];
            }
            if (axis.plan) {
                // FFTW's RODFT00 carries an extra factor of 2.
                fftw_execute_r2r(axis.plan, in.data(), out.data());
                for (std::size_t i = 0; i < n; ++i) {
                    data[off + i * stride] = 0.5 * out[i];
                }
            } else {
                dst1_direct(in, out);
                for (std::size_t i = 0; i < n; ++i) {
                    data[off + i * stride] = out[i];
                }
            }
        });
    }
}

SpectralVolume dst_forward(const ScalarVolume& u, const DstPlan& plan)
{
    require_plan(u.shape(), plan);
    SpectralVolume a{u.shape(), std::vector<double>(u.values().begin(), u.values().end()), plan.inverse_scale()};
    plan.transform(a.coeffs);
    return a;
}

ScalarVolume dst_inverse(const SpectralVolume& a, const DstPlan& plan)
{
    require_plan(a.shape, plan);
    std::vector<double> values(a.coeffs);
    plan.transform(values);
    for (auto& v : values) {
        v *= plan.inverse_scale();
    }
    return ScalarVolume(a.shape, std::move(values));
}

ScalarVolume solve_poisson(const ScalarVolume& f, const DstPlan& plan)
{
    require_plan(f.shape(), plan);
    require_finite(f.values());
    SpectralVolume a = dst_forward(f, plan);
    const auto& ev = plan.eigenvalues();
    const auto& shape = a.shape;
    for (std::size_t q = 0; q < a.coeffs.size(); ++q) {
        a.coeffs[q] /= -ev.lambda(shape.coords(q));
    }
    return dst_inverse(a, plan);
}

ScalarVolume solve_poisson_vjp(const ScalarVolume& upstream, const DstPlan& plan)
{
    return solve_poisson(upstream, plan);
}

} // namespace expjac
