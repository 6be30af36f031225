#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "expjac/fields.hpp"
#include "expjac/metrics.hpp"
#include "expjac/postprocess.hpp"

namespace expjac {

enum class Similarity { mse, ncc };
enum class Optimizer { adam, gd };

Similarity parse_similarity(const std::string& name);
Optimizer parse_optimizer(const std::string& name);

struct SimilarityValue {
    double value = 0.0;
    // d(value)/d(warped) per voxel.
    ScalarVolume gradient;
};

// Mean squared difference.
SimilarityValue mse_similarity(const ScalarVolume& fixed, const ScalarVolume& warped);
// Negative mean of the local squared correlation coefficient over a cubic
// window of odd width, zero-padded at the grid edge.
SimilarityValue ncc_similarity(const ScalarVolume& fixed, const ScalarVolume& warped, int window);

// Sum over a centred window of odd width, zero-padded.
ScalarVolume box_sum(const ScalarVolume& v, int window);

// Direct optimisation of a 2D displacement field phi under
//   sim(F, M o (Id + phi_p)) + lambda * reg(phi_p) + lambda_p * L_p,
// phi_p = postprocess(phi). reg is the squared Frobenius norm of Jac(phi_p).
// Both reg and L_p are averaged over voxels.
struct DemoConfig {
    double lambda = 1.0;
    double lambda_p = 0.01;
    Similarity similarity = Similarity::mse;
    int ncc_window = 9;
    int steps = 300;
    double learning_rate = 0.05;
    Optimizer optimizer = Optimizer::adam;
    // phi starts as random_smooth(seed) scaled to this peak magnitude.
    double init_amplitude = 0.01;
    std::uint64_t seed = 0;

    void check() const;
};

struct DemoStep {
    int step = 0;
    double total = 0.0;
    double similarity = 0.0;
    double regularizer = 0.0;
    double loss_p = 0.0;
};

struct DemoResult {
    DisplacementField phi;
    DisplacementField phi_p;
    std::vector<DemoStep> trace;
    // Terms evaluated at the final phi.
    DemoStep final_terms;
    NpjPercentages npj_phi;
    NpjPercentages npj_phi_p;
    std::optional<MetricsReport> report;

    nlohmann::json to_json() const;
};

struct DemoObjective {
    DemoStep terms;
    LayerOutput layer;
    // d(total)/d(phi); empty unless requested.
    DisplacementField gradient;
};

// One evaluation of the demo objective at phi.
DemoObjective evaluate_demo_objective(const ScalarVolume& fixed, const ScalarVolume& moving,
                                      const DisplacementField& phi, const DemoConfig& cfg, bool with_gradient);

// Throws Diverged when the objective becomes non-finite.
DemoResult run_demo_registration(const ScalarVolume& fixed, const ScalarVolume& moving, const DemoConfig& cfg,
                                 const LabelVolume* fixed_labels = nullptr,
                                 const LabelVolume* moving_labels = nullptr);

} // namespace expjac
