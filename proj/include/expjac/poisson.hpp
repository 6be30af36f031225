#pragma once

#include <memory>
#include <span>
#include <vector>

#include "expjac/fields.hpp"

namespace expjac {

// Per-axis Dirichlet Laplacian eigenvalues 2 - 2 cos(l pi / (N + 1)),
// l = 1..N. The eigenvalue of mode (l, m, n) is the sum over axes.
class EigenvalueCache {
public:
    explicit EigenvalueCache(const GridShape& shape);

    std::span<const double> axis(std::size_t a) const { return per_axis_[a]; }
    // Mode indices are zero-based: mode[a] = l - 1.
    double lambda(const Coord& mode) const;

private:
    std::vector<std::vector<double>> per_axis_;
};

// Unnormalised DST-I of one line: out[k] = sum_j in[j] sin((j+1)(k+1) pi / (N+1)).
// O(N^2) reference used for tiny axes and as an independent check.
void dst1_direct(std::span<const double> in, std::span<double> out);

// Immutable transform plan for one grid shape. Copies share the underlying
// FFTW plans; applying a plan from several threads at once is safe.
class DstPlan {
public:
    explicit DstPlan(const GridShape& shape);

    const GridShape& shape() const { return shape_; }
    const EigenvalueCache& eigenvalues() const { return *eigen_; }

    // In-place separable unnormalised DST-I over every axis.
    void transform(std::span<double> data) const;
    // Factor 2^d / prod(N_a + 1) that turns transform() into its own inverse.
    double inverse_scale() const { return inverse_scale_; }

    struct Impl;

private:
    GridShape shape_;
    std::shared_ptr<const EigenvalueCache> eigen_;
    std::shared_ptr<const Impl> impl_;
    double inverse_scale_ = 1.0;
};

// Sine-basis coefficients of a volume. `coeffs` holds the unnormalised sums;
// expansion_coefficient() applies the inverse scale so that
//   u(i,j,k) = sum a_lmn sin(i l pi/(H+1)) sin(j m pi/(D+1)) sin(k n pi/(W+1))
// with one-based voxel indices.
struct SpectralVolume {
    GridShape shape;
    std::vector<double> coeffs;
    double inverse_scale = 1.0;

    double expansion_coefficient(const Coord& mode) const { return inverse_scale * coeffs[shape.linear(mode)]; }
};

SpectralVolume dst_forward(const ScalarVolume& u, const DstPlan& plan);
ScalarVolume dst_inverse(const SpectralVolume& a, const DstPlan& plan);

// Solves discrete_laplacian(u) = f with zero values outside the grid:
// forward DST, divide by -lambda_lmn, inverse DST.
ScalarVolume solve_poisson(const ScalarVolume& f, const DstPlan& plan);

// The solve operator is symmetric, so its VJP is another solve.
ScalarVolume solve_poisson_vjp(const ScalarVolume& upstream, const DstPlan& plan);

} // namespace expjac
