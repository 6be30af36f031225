#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "expjac/fields.hpp"

namespace expjac {

// Deterministic generator shared by every synthetic source: uniform doubles
// come from the top 53 bits of mt19937_64, so sequences do not depend on the
// standard library's distribution implementations.
class SeededUniform {
public:
    explicit SeededUniform(std::uint64_t seed);
    double next(double lo, double hi);

private:
    std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Sinusoidal fold
//
// phi_0(i, ...) = a sin(k i) with k = 2 pi f / (N_0 - 1), on every line whose
// transverse coordinates are interior; all other components are zero and the
// boundary ring is zero. Because only phi_0 is nonzero, det(I + Jac) reduces
// to 1 + d(phi_0)/dx_0, whose central difference has the closed form
// a sin(k) cos(k i). Folds therefore appear once a sin(k) > 1, i.e. roughly
// once the slope ratio a k exceeds 1.
struct FoldField {
    DisplacementField field;
    double slope_ratio = 0.0;
    // Voxels with det(I + Jac) <= 0, counted from the closed-form stencil.
    std::size_t analytic_fold_count = 0;
};

// Throws InvalidArgument unless a >= 0 and 2f is a positive integer (so the
// sine vanishes on both faces of axis 0).
FoldField sinusoidal_fold(const GridShape& shape, double amplitude, double frequency, std::uint64_t seed = 0);
double fold_amplitude_for_ratio(const GridShape& shape, double ratio, double frequency);

// ---------------------------------------------------------------------------
// Harmonic-conjugate families (2D)
//
// phi = s (u, v) / h where u + iv is analytic on [-1, 1]^2 sampled with
// spacing h = 2 / (N - 1). The Jacobian in index units is then s times the
// physical Jacobian of (u, v), independent of resolution. s keeps the 1-norm
// of the Jacobian at or below 1.
enum class HarmonicFamily { z_squared, z_cubed, exp_z };

HarmonicFamily parse_harmonic_family(const std::string& name);
std::string family_name(HarmonicFamily family);

DisplacementField harmonic_conjugate_2d(const GridShape& shape, HarmonicFamily family, std::uint64_t seed = 0);

// Max over voxels at depth >= 2 of
//   min_A || [dJ/dx_c J]_c - A [dJ/dx_c]_c ||_F,
// divided by the max of ||[dJ/dx_c]_c||_F ||J||_F over the same voxels.
// Residuals below kResidualFloor are rounding noise.
inline constexpr double kResidualFloor = 1e-12;
double lemma_commutation_residual(const JacobianField& jac);

// Max |curl| of the rows of exp(Jac(phi)) over voxels at depth >= 2, divided
// by the grid spacing of axis 0 (physical units).
double exp_jacobian_curl_norm(const DisplacementField& phi);

struct LemmaLevel {
    std::size_t extent = 0;
    double spacing = 0.0;
    double curl_norm = 0.0;
    double commutation_residual = 0.0;
};

struct LemmaReport {
    std::string source;
    std::vector<LemmaLevel> levels;
    std::vector<double> curl_ratios;
    bool residual_monotone = false;
    bool hypothesis_satisfied = false;

    nlohmann::json to_json() const;
};

// Refinement sweep over square grids of the given extents.
LemmaReport lemma_check_family(HarmonicFamily family, const std::vector<std::size_t>& extents);
// Single field: hypothesis is flagged satisfied when the residual is at or
// below `tolerance`.
LemmaReport lemma_check_field(const DisplacementField& phi, const std::string& source, double tolerance = 1e-3);

// ---------------------------------------------------------------------------
// Other generators

// Sum of random low-frequency sine modes times a window vanishing on the
// boundary, rescaled so the peak magnitude equals `amplitude` voxels.
DisplacementField random_smooth(const GridShape& shape, double amplitude, std::uint64_t seed);

// phi(x) = A (x - centre) in voxel units.
DisplacementField linear_field(const GridShape& shape, const Eigen::MatrixXd& matrix);

struct BlobPair {
    ScalarVolume fixed;
    ScalarVolume moving;
    LabelVolume fixed_labels;
    LabelVolume moving_labels;
    // moving(x) = fixed-blobs evaluated at x - w(x); w is returned here.
    DisplacementField warp;
};

struct BlobPairOptions {
    std::size_t blob_count = 3;
    // When set, w is this constant translation instead of a random field.
    std::optional<std::vector<double>> translation;
};

BlobPair gaussian_blob_pair(const GridShape& shape, double displacement, std::uint64_t seed,
                            const BlobPairOptions& options = {});

} // namespace expjac
