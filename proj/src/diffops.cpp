#include "expjac/diffops.hpp"

namespace expjac {

namespace {

void require_stencil_extent(const GridShape& shape)
{
    for (std::size_t a = 0; a < shape.rank(); ++a) {
        if (shape.extent(a) < 3) {
            throw Error(ErrorCode::ShapeTooSmall, "finite differences need 3 samples per axis, grid is " +
                                                      describe(shape));
        }
    }
}

void diff_line(std::span<const double> in, std::span<double> out, std::size_t offset, std::size_t stride,
               std::size_t n)
{
    auto u = [&](std::size_t i) { return in[offset + i * stride]; };
    out[offset] = u(1) - u(0);
    for (std::size_t i = 1; i + 1 < n; ++i) {
        out[offset + i * stride] = 0.5 * (u(i + 1) - u(i - 1));
    }
    out[offset + (n - 1) * stride] = u(n - 1) - u(n - 2);
}

// Accumulates D^T g into out.
void diff_line_adjoint(std::span<const double> g, std::span<double> out, std::size_t offset, std::size_t stride,
                       std::size_t n)
{
    auto o = [&](std::size_t i) -> double& { return out[offset + i * stride]; };
    const double g0 = g[offset];
    o(0) -= g0;
    o(1) += g0;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const double gi = g[offset + i * stride];
        o(i + 1) += 0.5 * gi;
        o(i - 1) -= 0.5 * gi;
    }
    const double gl = g[offset + (n - 1) * stride];
    o(n - 1) += gl;
    o(n - 2) -= gl;
}

void add_derivative(std::span<const double> in, std::span<double> acc, const GridShape& shape, std::size_t axis,
                    std::vector<double>& scratch)
{
    scratch.assign(shape.voxel_count(), 0.0);
    for_each_line(shape, axis, [&](std::size_t off, std::size_t stride, std::size_t n) {
        diff_line(in, scratch, off, stride, n);
    });
    for (std::size_t q = 0; q < acc.size(); ++q) {
        acc[q] += scratch[q];
    }
}

} // namespace

std::string interior_name(StencilScheme::Interior)
{
    return "central";
}

std::string boundary_name(StencilScheme::Boundary)
{
    return "one_sided_first_order";
}

ScalarVolume derivative(const ScalarVolume& u, std::size_t axis)
{
    require_stencil_extent(u.shape());
    ScalarVolume out(u.shape());
    for_each_line(u.shape(), axis, [&](std::size_t off, std::size_t stride, std::size_t n) {
        diff_line(u.values(), out.values(), off, stride, n);
    });
    return out;
}

ScalarVolume derivative_adjoint(const ScalarVolume& g, std::size_t axis)
{
    require_stencil_extent(g.shape());
    ScalarVolume out(g.shape());
    for_each_line(g.shape(), axis, [&](std::size_t off, std::size_t stride, std::size_t n) {
        diff_line_adjoint(g.values(), out.values(), off, stride, n);
    });
    return out;
}

JacobianField jacobian(const DisplacementField& field)
{
    const auto& shape = field.shape();
    require_stencil_extent(shape);
    const std::size_t d = field.rank();
    JacobianField out(shape, d);
    std::vector<double> line(shape.voxel_count());
    for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            for_each_line(shape, c, [&](std::size_t off, std::size_t stride, std::size_t n) {
                diff_line(field.component(r), line, off, stride, n);
            });
            for (std::size_t q = 0; q < line.size(); ++q) {
                out.at(q, r, c) = line[q];
            }
        }
    }
    return out;
}

DisplacementField jacobian_adjoint(const JacobianField& cotangent)
{
    const auto& shape = cotangent.shape();
    require_stencil_extent(shape);
    const std::size_t d = cotangent.dim();
    DisplacementField out(shape);
    for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            const ScalarVolume g = cotangent.entry_volume(r, c);
            auto comp = out.component(r);
            for_each_line(shape, c, [&](std::size_t off, std::size_t stride, std::size_t n) {
                diff_line_adjoint(g.values(), comp, off, stride, n);
            });
        }
    }
    return out;
}

std::vector<ScalarVolume> divergence_rows(const JacobianField& field)
{
    const auto& shape = field.shape();
    require_stencil_extent(shape);
    const std::size_t d = field.dim();
    std::vector<ScalarVolume> out(d, ScalarVolume(shape));
    std::vector<double> scratch;
    for (std::size_t t = 0; t < d; ++t) {
        for (std::size_t c = 0; c < d; ++c) {
            const ScalarVolume entry = field.entry_volume(t, c);
            add_derivative(entry.values(), out[t].values(), shape, c, scratch);
        }
    }
    return out;
}

JacobianField divergence_rows_adjoint(const std::vector<ScalarVolume>& cotangent)
{
    if (cotangent.empty()) {
        throw Error(ErrorCode::InvalidArgument, "empty divergence cotangent");
    }
    const auto& shape = cotangent.front().shape();
    require_stencil_extent(shape);
    const std::size_t d = shape.rank();
    if (cotangent.size() != d) {
        throw Error(ErrorCode::ShapeMismatch, "divergence cotangent count must equal grid rank");
    }
    JacobianField out(shape, d);
    for (std::size_t t = 0; t < d; ++t) {
        for (std::size_t c = 0; c < d; ++c) {
            out.set_entry_volume(t, c, derivative_adjoint(cotangent[t], c));
        }
    }
    return out;
}

std::vector<ScalarVolume> curl_rows(const JacobianField& field)
{
    const auto& shape = field.shape();
    require_stencil_extent(shape);
    const std::size_t d = field.dim();
    auto dd = [&](std::size_t t, std::size_t entry, std::size_t axis) {
        return derivative(field.entry_volume(t, entry), axis);
    };
    std::vector<ScalarVolume> out;
    for (std::size_t t = 0; t < d; ++t) {
        if (d == 2) {
            ScalarVolume a = dd(t, 1, 0);
            const ScalarVolume b = dd(t, 0, 1);
            for (std::size_t q = 0; q < a.size(); ++q) {
                a[q] -= b[q];
            }
            out.push_back(std::move(a));
        } else {
            for (std::size_t k = 0; k < 3; ++k) {
                const std::size_t i = (k + 1) % 3;
                const std::size_t j = (k + 2) % 3;
                // component k: d/dx_i of entry j minus d/dx_j of entry i
                ScalarVolume a = dd(t, j, i);
                const ScalarVolume b = dd(t, i, j);
                for (std::size_t q = 0; q < a.size(); ++q) {
                    a[q] -= b[q];
                }
                out.push_back(std::move(a));
            }
        }
    }
    return out;
}

ScalarVolume discrete_laplacian(const ScalarVolume& u)
{
    const auto& shape = u.shape();
    ScalarVolume out(shape);
    const auto in = u.values();
    auto res = out.values();
    for (std::size_t a = 0; a < shape.rank(); ++a) {
        for_each_line(shape, a, [&](std::size_t off, std::size_t stride, std::size_t n) {
            for (std::size_t i = 0; i < n; ++i) {
                const double left = i > 0 ? in[off + (i - 1) * stride] : 0.0;
                const double right = i + 1 < n ? in[off + (i + 1) * stride] : 0.0;
                res[off + i * stride] += left - 2.0 * in[off + i * stride] + right;
            }
        });
    }
    return out;
}

} // namespace expjac
