#include "expjac/postprocess.hpp"

#include <chrono>
#include <cmath>

#include "expjac/poisson.hpp"

namespace expjac {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start)
{
    return std::chrono::duration<double>(Clock::now() - start).count();
}

void require_layer_input(const DisplacementField& phi)
{
    for (const auto& v : validate(phi)) {
        if (v.what.rfind("extent below", 0) == 0) {
            throw Error(ErrorCode::ShapeTooSmall, v.what);
        }
        if (v.what == "non-finite value") {
            const Coord c = *v.voxel;
            throw Error(ErrorCode::NonFiniteInput, "non-finite displacement at voxel (" + std::to_string(c[0]) +
                                                       "," + std::to_string(c[1]) + "," + std::to_string(c[2]) + ")");
        }
    }
}

std::vector<double> squared_residuals(const JacobianField& target, const JacobianField& actual)
{
    std::vector<double> per_voxel(target.voxel_count());
    for (std::size_t q = 0; q < per_voxel.size(); ++q) {
        const auto a = target.matrix(q);
        const auto b = actual.matrix(q);
        double s = 0.0;
        for (std::size_t e = 0; e < a.size(); ++e) {
            const double d = a[e] - b[e];
            s += d * d;
        }
        per_voxel[q] = s;
    }
    return per_voxel;
}

DisplacementField reconstruct(const JacobianField& target, Precision precision, std::map<std::string, double>* timings)
{
    const auto& shape = target.shape();
    auto start = Clock::now();
    const auto rhs = divergence_rows(target);
    if (timings) {
        (*timings)["divergence"] = seconds_since(start);
    }
    start = Clock::now();
    const DstPlan plan(shape.interior());
    DisplacementField out(shape, Precision::f64, true);
    for (std::size_t t = 0; t < target.dim(); ++t) {
        const ScalarVolume inner = solve_poisson(extract_interior(rhs[t]), plan);
        out.set_component(t, embed_interior(inner, shape));
    }
    if (timings) {
        (*timings)["poisson"] = seconds_since(start);
    }
    return out.with_precision(precision);
}

} // namespace

double pairwise_sum(std::span<const double> values)
{
    if (values.size() <= 8) {
        double s = 0.0;
        for (const double v : values) {
            s += v;
        }
        return s;
    }
    const std::size_t half = values.size() / 2;
    return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

ScalarVolume extract_interior(const ScalarVolume& volume)
{
    const GridShape inner_shape = volume.shape().interior();
    ScalarVolume inner(inner_shape);
    for (std::size_t q = 0; q < inner.size(); ++q) {
        Coord c = inner_shape.coords(q);
        for (std::size_t a = 0; a < inner_shape.rank(); ++a) {
            ++c[a];
        }
        inner[q] = volume.at(c);
    }
    return inner;
}

ScalarVolume embed_interior(const ScalarVolume& inner, const GridShape& full)
{
    if (!inner.shape().same_extents(full.interior())) {
        throw Error(ErrorCode::ShapeMismatch, "interior volume does not fit grid " + describe(full));
    }
    ScalarVolume out(full);
    for (std::size_t q = 0; q < inner.size(); ++q) {
        Coord c = inner.shape().coords(q);
        for (std::size_t a = 0; a < full.rank(); ++a) {
            ++c[a];
        }
        out.at(c) = inner[q];
    }
    return out;
}

DisplacementField reconstruct_from_jacobian(const JacobianField& target)
{
    return reconstruct(target, Precision::f64, nullptr);
}

LayerOutput postprocess(const DisplacementField& phi, const PostprocessConfig& cfg)
{
    require_layer_input(phi);
    LayerOutput out;
    auto start = Clock::now();
    const JacobianField jac = jacobian(phi);
    out.timings["jacobian"] = seconds_since(start);

    start = Clock::now();
    JacobianField j_prime = expm_field(jac, cfg.matexp);
    out.timings["expm"] = seconds_since(start);

    out.phi_p = reconstruct(j_prime, phi.precision(), &out.timings);

    start = Clock::now();
    out.loss_p = reconstruction_loss(j_prime, out.phi_p);
    out.timings["loss"] = seconds_since(start);

    if (cfg.record_intermediates) {
        out.j_prime = std::move(j_prime);
    }
    double total = 0.0;
    for (const auto& [stage, t] : out.timings) {
        total += t;
    }
    out.timings["total"] = total;
    return out;
}

double reconstruction_loss(const JacobianField& target, const DisplacementField& phi_p)
{
    if (!target.shape().same_extents(phi_p.shape()) || target.dim() != phi_p.rank()) {
        throw Error(ErrorCode::ShapeMismatch, "loss operands have different shapes");
    }
    const auto per_voxel = squared_residuals(target, jacobian(phi_p));
    return pairwise_sum(per_voxel);
}

double loss_p(const DisplacementField& phi, const DisplacementField& phi_p, const PostprocessConfig& cfg)
{
    if (!phi.shape().same_extents(phi_p.shape()) || phi.rank() != phi_p.rank()) {
        throw Error(ErrorCode::ShapeMismatch, "loss_p operands have different shapes");
    }
    return reconstruction_loss(expm_field(jacobian(phi), cfg.matexp), phi_p);
}

double loss_p_mean(const DisplacementField& phi, const DisplacementField& phi_p, const PostprocessConfig& cfg)
{
    return loss_p(phi, phi_p, cfg) / static_cast<double>(phi.shape().voxel_count());
}

DisplacementField postprocess_vjp(const DisplacementField& phi, const DisplacementField& upstream_phi_p,
                                  double upstream_loss, const PostprocessConfig& cfg)
{
    require_layer_input(phi);
    const auto& shape = phi.shape();
    if (!upstream_phi_p.shape().same_extents(shape) || upstream_phi_p.rank() != phi.rank()) {
        throw Error(ErrorCode::ShapeMismatch, "phi_p cotangent shape differs from phi");
    }
    const std::size_t d = phi.rank();

    const JacobianField jac = jacobian(phi);
    const JacobianField j_prime = expm_field(jac, cfg.matexp);

    // Cotangents of phi_p and of J'.
    std::vector<ScalarVolume> phi_p_bar;
    for (std::size_t t = 0; t < d; ++t) {
        phi_p_bar.push_back(upstream_phi_p.component_volume(t));
    }
    JacobianField j_prime_bar(shape, d);
    if (upstream_loss != 0.0) {
        const DisplacementField phi_p = reconstruct(j_prime, Precision::f64, nullptr);
        const JacobianField jac_p = jacobian(phi_p);
        JacobianField residual(shape, d);
        for (std::size_t i = 0; i < residual.data().size(); ++i) {
            residual.data()[i] = 2.0 * upstream_loss * (j_prime.data()[i] - jac_p.data()[i]);
        }
        const DisplacementField through_jac = jacobian_adjoint(residual);
        for (std::size_t t = 0; t < d; ++t) {
            auto comp = through_jac.component(t);
            for (std::size_t q = 0; q < comp.size(); ++q) {
                phi_p_bar[t][q] -= comp[q];
            }
        }
        j_prime_bar = std::move(residual);
    }

    // phi_p_t = embed(solve(extract(div_t(J')))); adjoint runs the chain backwards.
    const DstPlan plan(shape.interior());
    std::vector<ScalarVolume> rhs_bar;
    for (std::size_t t = 0; t < d; ++t) {
        const ScalarVolume inner = solve_poisson_vjp(extract_interior(phi_p_bar[t]), plan);
        rhs_bar.push_back(embed_interior(inner, shape));
    }
    const JacobianField through_div = divergence_rows_adjoint(rhs_bar);
    for (std::size_t i = 0; i < j_prime_bar.data().size(); ++i) {
        j_prime_bar.data()[i] += through_div.data()[i];
    }

    const JacobianField jac_bar = expm_field_vjp(jac, j_prime_bar, cfg.matexp);
    return jacobian_adjoint(jac_bar);
}

} // namespace expjac
