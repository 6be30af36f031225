#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>

#include "expjac/diffops.hpp"
#include "expjac/fields.hpp"
#include "expjac/matexp.hpp"

namespace expjac {

struct PostprocessConfig {
    MatExpConfig matexp;
    StencilScheme stencil;
    // Keep the exponentiated Jacobian field in the output.
    bool record_intermediates = false;
};

struct LayerOutput {
    DisplacementField phi_p;
    std::optional<JacobianField> j_prime;
    // Summed reconstruction loss over every voxel, boundary included.
    double loss_p = 0.0;
    // Wall time per stage in seconds.
    std::map<std::string, double> timings;
};

// Order-independent pairwise summation; used wherever a reproducible total
// over voxels is needed.
double pairwise_sum(std::span<const double> values);

ScalarVolume extract_interior(const ScalarVolume& volume);
ScalarVolume embed_interior(const ScalarVolume& inner, const GridShape& full);

// Poisson stage on its own: for each row t, solves
//   laplacian(phi_p_t) = div(target row t)
// on the interior with the boundary ring held at zero. The normal equations
// of  min sum_edges (u(q + e_c) - u(q) - (T(q) + T(q + e_c)) / 2)^2  are
// exactly this system.
DisplacementField reconstruct_from_jacobian(const JacobianField& target);

// phi -> Jac(phi) -> exp(Jac(phi)) -> Poisson reconstruction.
LayerOutput postprocess(const DisplacementField& phi, const PostprocessConfig& cfg = {});

// sum_q || exp(Jac(phi(q))) - Jac(phi_p(q)) ||_F^2
double loss_p(const DisplacementField& phi, const DisplacementField& phi_p, const PostprocessConfig& cfg = {});
// Same loss divided by the voxel count. Not the summed loss used by the layer; it
// keeps weights comparable across grid sizes.
double loss_p_mean(const DisplacementField& phi, const DisplacementField& phi_p, const PostprocessConfig& cfg = {});
// sum_q || target(q) - Jac(phi_p(q)) ||_F^2
double reconstruction_loss(const JacobianField& target, const DisplacementField& phi_p);

// Reverse-mode gradient of  <upstream_phi_p, phi_p> + upstream_loss * loss_p
// with respect to phi.
DisplacementField postprocess_vjp(const DisplacementField& phi, const DisplacementField& upstream_phi_p,
                                  double upstream_loss, const PostprocessConfig& cfg = {});

} // namespace expjac
