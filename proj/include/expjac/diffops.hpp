#pragma once

#include <string>
#include <vector>

#include "expjac/fields.hpp"

namespace expjac {

// Finite-difference scheme used for every first derivative in the library.
// Interior voxels use the second-order central difference; the first and
// last sample along an axis use a first-order one-sided difference. All
// derivatives are taken in index space (unit step).
struct StencilScheme {
    enum class Interior { central };
    enum class Boundary { one_sided_first_order };

    Interior interior = Interior::central;
    Boundary boundary = Boundary::one_sided_first_order;

    bool operator==(const StencilScheme&) const = default;
};

std::string interior_name(StencilScheme::Interior s);
std::string boundary_name(StencilScheme::Boundary s);

// First derivative of a scalar volume along one axis, and its transpose.
ScalarVolume derivative(const ScalarVolume& u, std::size_t axis);
ScalarVolume derivative_adjoint(const ScalarVolume& g, std::size_t axis);

// Entry (r, c) of the result is d(phi_r)/d(x_c). Throws ShapeTooSmall when
// any extent is below 3.
JacobianField jacobian(const DisplacementField& field);

// Transpose of jacobian(): maps a matrix-field cotangent onto the field.
DisplacementField jacobian_adjoint(const JacobianField& cotangent);

// Volume t is the divergence of row t of the matrix field.
std::vector<ScalarVolume> divergence_rows(const JacobianField& field);

// Transpose of divergence_rows().
JacobianField divergence_rows_adjoint(const std::vector<ScalarVolume>& cotangent);

// Curl of each row treated as a vector field. In 2D one scalar per row
// (d/dx0 of entry 1 minus d/dx1 of entry 0); in 3D three volumes per row,
// stored at index 3 * row + component.
std::vector<ScalarVolume> curl_rows(const JacobianField& field);

// (2d+1)-point Laplacian with zero values assumed outside the grid.
ScalarVolume discrete_laplacian(const ScalarVolume& u);

} // namespace expjac
