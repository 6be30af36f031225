#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "expjac/diffops.hpp"
#include "expjac/fields.hpp"

namespace expjac {

// 2|A n B| / (|A| + |B|) for the voxels carrying `id`. Two empty sets score 1.
// Throws UnknownStructure when neither volume lists `id`.
double dice(const LabelVolume& a, const LabelVolume& b, std::int32_t id);

// Per-voxel determinant of the Jacobian matrix, optionally of I + J.
std::vector<double> determinants(const JacobianField& jac, bool add_identity);

struct NpjPercentages {
    // det(Jac(phi)) <= 0
    double displacement_pct = 0.0;
    // det(I + Jac(phi)) <= 0, the warp Id + phi actually applied
    double transform_pct = 0.0;
    std::size_t displacement_count = 0;
    std::size_t transform_count = 0;
    std::size_t voxels = 0;
};

NpjPercentages npj_percentages(const DisplacementField& phi, const StencilScheme& stencil = {});

// output(q) = input(q + phi(q)) in index coordinates, clamped to the grid.
// Scalars use multilinear interpolation, labels nearest neighbour.
ScalarVolume warp(const ScalarVolume& volume, const DisplacementField& phi);
LabelVolume warp(const LabelVolume& labels, const DisplacementField& phi);

// Warped volume plus d(output(q))/d(phi_c(q)) for every axis c. The
// derivative is zero along an axis where the sample was clamped.
struct WarpWithGradient {
    ScalarVolume warped;
    std::vector<ScalarVolume> gradient;
};
WarpWithGradient warp_with_gradient(const ScalarVolume& volume, const DisplacementField& phi);

struct MetricsReport {
    std::map<std::int32_t, double> dice_per_structure;
    // Written as null in JSON when no structure was scored.
    double mean_dice = 0.0;
    // NPJ of phi_p.
    double npj_displacement_pct = 0.0;
    double npj_transform_pct = 0.0;
    // NPJ of the layer input phi, when supplied.
    std::optional<double> input_npj_displacement_pct;
    std::optional<double> input_npj_transform_pct;
    StencilScheme stencil;
    std::map<std::string, double> timings;

    nlohmann::json to_json() const;
};

// Warps moving_labels by Id + phi_p and scores it against fixed_labels.
// An empty structure list means every structure listed in fixed_labels.
MetricsReport evaluate(const LabelVolume& fixed_labels, const LabelVolume& moving_labels,
                       const DisplacementField& phi_p, const DisplacementField* phi,
                       std::vector<std::int32_t> structures);

} // namespace expjac
