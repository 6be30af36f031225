#include "expjac/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Dense>

#include "expjac/diffops.hpp"
#include "expjac/matexp.hpp"

namespace expjac {

namespace {

constexpr double kPi = std::numbers::pi;

double sq(double x)
{
    return x * x;
}

} // namespace

SeededUniform::SeededUniform(std::uint64_t seed) : engine_(seed) {}

double SeededUniform::next(double lo, double hi)
{
    const double unit = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * unit;
}

// ---------------------------------------------------------------------------

double fold_amplitude_for_ratio(const GridShape& shape, double ratio, double frequency)
{
    const double k = 2.0 * kPi * frequency / static_cast<double>(shape.extent(0) - 1);
    return ratio / k;
}

FoldField sinusoidal_fold(const GridShape& shape, double amplitude, double frequency, std::uint64_t)
{
    if (!(amplitude >= 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "fold amplitude must be non-negative");
    }
    const double twice = 2.0 * frequency;
    if (!(frequency > 0.0) || twice != std::round(twice)) {
        throw Error(ErrorCode::InvalidArgument, "fold frequency must be a positive multiple of 1/2");
    }
    for (std::size_t a = 0; a < shape.rank(); ++a) {
        if (shape.extent(a) < 3) {
            throw Error(ErrorCode::ShapeTooSmall, "fold field needs 3 samples per axis");
        }
    }
    const std::size_t n0 = shape.extent(0);
    const double k = 2.0 * kPi * frequency / static_cast<double>(n0 - 1);

    FoldField out{DisplacementField(shape, Precision::f64, true), amplitude * k, 0};
    auto comp = out.field.component(0);
    for (std::size_t q = 0; q < shape.voxel_count(); ++q) {
        const Coord c = shape.coords(q);
        if (!shape.on_boundary(c)) {
            comp[q] = amplitude * std::sin(k * static_cast<double>(c[0]));
        }
    }

    // Closed-form derivative along axis 0 for each line position.
    std::size_t folds_per_line = 0;
    for (std::size_t i = 0; i < n0; ++i) {
        double slope;
        if (i == 0) {
            slope = amplitude * std::sin(k);
        } else if (i == n0 - 1) {
            slope = -amplitude * std::sin(k * static_cast<double>(n0 - 2));
        } else {
            slope = amplitude * std::sin(k) * std::cos(k * static_cast<double>(i));
        }
        folds_per_line += (1.0 + slope <= 0.0);
    }
    std::size_t lines = 1;
    for (std::size_t a = 1; a < shape.rank(); ++a) {
        lines *= shape.extent(a) - 2;
    }
    out.analytic_fold_count = folds_per_line * lines;
    return out;
}

// ---------------------------------------------------------------------------

HarmonicFamily parse_harmonic_family(const std::string& name)
{
    if (name == "z2" || name == "z_squared") return HarmonicFamily::z_squared;
    if (name == "z3" || name == "z_cubed") return HarmonicFamily::z_cubed;
    if (name == "exp" || name == "exp_z") return HarmonicFamily::exp_z;
    throw Error(ErrorCode::InvalidArgument, "unknown harmonic family '" + name + "'");
}

std::string family_name(HarmonicFamily family)
{
    switch (family) {
    case HarmonicFamily::z_squared: return "z2";
    case HarmonicFamily::z_cubed: return "z3";
    case HarmonicFamily::exp_z: return "exp";
    }
    return "?";
}

DisplacementField harmonic_conjugate_2d(const GridShape& shape, HarmonicFamily family, std::uint64_t)
{
    if (shape.rank() != 2) {
        throw Error(ErrorCode::InvalidArgument, "harmonic-conjugate families are two-dimensional");
    }
    const double hx = 2.0 / static_cast<double>(shape.extent(0) - 1);
    const double hy = 2.0 / static_cast<double>(shape.extent(1) - 1);
    // Scale so that max ||Jac||_1 over [-1, 1]^2 is at most 1.
    double s = 1.0;
    switch (family) {
    case HarmonicFamily::z_squared: s = 0.25; break;
    case HarmonicFamily::z_cubed: s = 1.0 / 6.0; break;
    case HarmonicFamily::exp_z: s = 0.25; break;
    }
    DisplacementField out(shape.with_spacing({hx, hy}));
    auto u = out.component(0);
    auto v = out.component(1);
    for (std::size_t q = 0; q < shape.voxel_count(); ++q) {
        const Coord c = shape.coords(q);
        const double x = -1.0 + hx * static_cast<double>(c[0]);
        const double y = -1.0 + hy * static_cast<double>(c[1]);
        double re = 0.0, im = 0.0;
        switch (family) {
        case HarmonicFamily::z_squared:
            re = x * x - y * y;
            im = 2.0 * x * y;
            break;
        case HarmonicFamily::z_cubed:
            re = x * x * x - 3.0 * x * y * y;
            im = 3.0 * x * x * y - y * y * y;
            break;
        case HarmonicFamily::exp_z:
            re = std::exp(x) * std::cos(y);
            im = std::exp(x) * std::sin(y);
            break;
        }
        // Axis 0 in index units covers hx per step, axis 1 covers hy.
        u[q] = s * re / hx;
        v[q] = s * im / hy;
    }
    return out;
}

double lemma_commutation_residual(const JacobianField& jac)
{
    const auto& shape = jac.shape();
    const std::size_t d = jac.dim();
    // derivs[c * d * d + r * d + k] is d(J_rk)/dx_c.
    std::vector<ScalarVolume> derivs;
    for (std::size_t c = 0; c < d; ++c) {
        for (std::size_t r = 0; r < d; ++r) {
            for (std::size_t k = 0; k < d; ++k) {
                derivs.push_back(derivative(jac.entry_volume(r, k), c));
            }
        }
    }
    const auto dd = static_cast<Eigen::Index>(d);
    double worst = 0.0;
    double max_scale = 0.0;
    for (std::size_t q = 0; q < shape.voxel_count(); ++q) {
        if (shape.depth(shape.coords(q)) < 2) {
            continue;
        }
        Eigen::MatrixXd j(dd, dd);
        for (std::size_t r = 0; r < d; ++r) {
            for (std::size_t k = 0; k < d; ++k) {
                j(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = jac.at(q, r, k);
            }
        }
        // M = [dJ/dx_0 ... dJ/dx_{d-1}],  N = [dJ/dx_0 J ...]
        Eigen::MatrixXd m(dd, dd * dd);
        Eigen::MatrixXd n(dd, dd * dd);
        for (std::size_t c = 0; c < d; ++c) {
            Eigen::MatrixXd dj(dd, dd);
            for (std::size_t r = 0; r < d; ++r) {
                for (std::size_t k = 0; k < d; ++k) {
                    dj(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) =
                        derivs[c * d * d + r * d + k][q];
                }
            }
            const auto col = static_cast<Eigen::Index>(c) * dd;
            m.middleCols(col, dd) = dj;
            n.middleCols(col, dd) = dj * j;
        }
        // A M = N in the least-squares sense: M^T A^T = N^T.
        const Eigen::MatrixXd at = m.transpose().completeOrthogonalDecomposition().solve(n.transpose());
        worst = std::max(worst, (at.transpose() * m - n).norm());
        max_scale = std::max(max_scale, m.norm() * j.norm());
    }
    if (max_scale == 0.0) {
        return 0.0;
    }
    worst /= max_scale;
    return worst;
}

double exp_jacobian_curl_norm(const DisplacementField& phi)
{
    const JacobianField e = expm_field(jacobian(phi));
    const auto curls = curl_rows(e);
    const auto& shape = phi.shape();
    double worst = 0.0;
    for (const auto& vol : curls) {
        for (std::size_t q = 0; q < vol.size(); ++q) {
            if (shape.depth(shape.coords(q)) >= 2) {
                worst = std::max(worst, std::abs(vol[q]));
            }
        }
    }
    return worst / shape.spacing()[0];
}

nlohmann::json LemmaReport::to_json() const
{
    nlohmann::json levels_json = nlohmann::json::array();
    for (const auto& l : levels) {
        levels_json.push_back({{"extent", l.extent},
                               {"spacing", l.spacing},
                               {"curl_norm", l.curl_norm},
                               {"commutation_residual", l.commutation_residual}});
    }
    return {{"source", source},
            {"levels", levels_json},
            {"curl_ratios", curl_ratios},
            {"residual_monotone", residual_monotone},
            {"hypothesis_satisfied", hypothesis_satisfied},
            {"verdict", hypothesis_satisfied ? "hypothesis satisfied" : "hypothesis not satisfied"}};
}

LemmaReport lemma_check_family(HarmonicFamily family, const std::vector<std::size_t>& extents)
{
    LemmaReport report;
    report.source = "family:" + family_name(family);
    for (const auto n : extents) {
        const DisplacementField phi = harmonic_conjugate_2d(GridShape({n, n}), family);
        report.levels.push_back({n, phi.shape().spacing()[0], exp_jacobian_curl_norm(phi),
                                 lemma_commutation_residual(jacobian(phi))});
    }
    report.residual_monotone = true;
    for (std::size_t i = 1; i < report.levels.size(); ++i) {
        const auto& prev = report.levels[i - 1];
        const auto& cur = report.levels[i];
        report.curl_ratios.push_back(cur.curl_norm > 0.0 ? prev.curl_norm / cur.curl_norm
                                                         : std::numeric_limits<double>::infinity());
        if (!(cur.commutation_residual < prev.commutation_residual) && cur.commutation_residual > kResidualFloor) {
            report.residual_monotone = false;
        }
    }
    // Satisfied when refinement drives the residual down.
    report.hypothesis_satisfied = report.levels.size() >= 2 && report.residual_monotone;
    return report;
}

LemmaReport lemma_check_field(const DisplacementField& phi, const std::string& source, double tolerance)
{
    LemmaReport report;
    report.source = source;
    const double residual = lemma_commutation_residual(jacobian(phi));
    report.levels.push_back({phi.shape().extent(0), phi.shape().spacing()[0], exp_jacobian_curl_norm(phi), residual});
    report.residual_monotone = true;
    report.hypothesis_satisfied = residual <= tolerance;
    return report;
}

// ---------------------------------------------------------------------------

DisplacementField random_smooth(const GridShape& shape, double amplitude, std::uint64_t seed)
{
    SeededUniform rng(seed);
    const std::size_t d = shape.rank();
    constexpr int kModes = 3;
    struct Mode {
        double coeff;
        std::array<double, 3> wave;
        std::array<double, 3> phase;
    };
    std::vector<std::vector<Mode>> modes(d);
    for (auto& per_comp : modes) {
        for (int m = 0; m < kModes; ++m) {
            Mode mode{rng.next(-1.0, 1.0), {1, 1, 1}, {0, 0, 0}};
            for (std::size_t a = 0; a < d; ++a) {
                mode.wave[a] = std::floor(rng.next(1.0, 4.0));
                mode.phase[a] = rng.next(0.0, 2.0 * kPi);
            }
            per_comp.push_back(mode);
        }
    }
    DisplacementField out(shape, Precision::f64, true);
    double peak = 0.0;
    for (std::size_t q = 0; q < shape.voxel_count(); ++q) {
        const Coord c = shape.coords(q);
        double window = 1.0;
        std::array<double, 3> x{0, 0, 0};
        for (std::size_t a = 0; a < d; ++a) {
            x[a] = static_cast<double>(c[a]) / static_cast<double>(shape.extent(a) - 1);
            window *= std::sin(kPi * x[a]);
        }
        if (shape.on_boundary(c)) {
            window = 0.0;
        }
        for (std::size_t t = 0; t < d; ++t) {
            double v = 0.0;
            for (const auto& mode : modes[t]) {
                double term = mode.coeff;
                for (std::size_t a = 0; a < d; ++a) {
                    term *= std::sin(kPi * mode.wave[a] * x[a] + mode.phase[a]);
                }
                v += term;
            }
            out.component(t)[q] = window * v;
            peak = std::max(peak, std::abs(window * v));
        }
    }
    if (peak > 0.0) {
        for (std::size_t t = 0; t < d; ++t) {
            for (auto& v : out.component(t)) {
                v *= amplitude / peak;
            }
        }
    }
    return out;
}

DisplacementField linear_field(const GridShape& shape, const Eigen::MatrixXd& matrix)
{
    const std::size_t d = shape.rank();
    if (matrix.rows() != static_cast<Eigen::Index>(d) || matrix.cols() != static_cast<Eigen::Index>(d)) {
        throw Error(ErrorCode::ShapeMismatch, "linear field matrix must be d x d");
    }
    DisplacementField out(shape);
    for (std::size_t q = 0; q < shape.voxel_count(); ++q) {
        const Coord c = shape.coords(q);
        for (std::size_t r = 0; r < d; ++r) {
            double v = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double centre = 0.5 * static_cast<double>(shape.extent(k) - 1);
                v += matrix(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) *
                     (static_cast<double>(c[k]) - centre);
            }
            out.component(r)[q] = v;
        }
    }
    return out;
}

BlobPair gaussian_blob_pair(const GridShape& shape, double displacement, std::uint64_t seed,
                            const BlobPairOptions& options)
{
    const std::size_t d = shape.rank();
    SeededUniform rng(seed);
    struct Blob {
        std::array<double, 3> centre;
        double sigma;
    };
    double min_extent = static_cast<double>(*std::min_element(shape.dims().begin(), shape.dims().end()));
    std::vector<Blob> blobs;
    for (std::size_t b = 0; b < options.blob_count; ++b) {
        Blob blob{{0, 0, 0}, rng.next(0.08, 0.12) * min_extent};
        for (std::size_t a = 0; a < d; ++a) {
            const double n = static_cast<double>(shape.extent(a) - 1);
            blob.centre[a] = rng.next(0.3, 0.7) * n;
        }
        blobs.push_back(blob);
    }

    DisplacementField w = options.translation ? DisplacementField(shape)
                                              : random_smooth(shape, displacement, seed ^ 0x9e3779b97f4a7c15ULL);
    if (options.translation) {
        if (options.translation->size() != d) {
            throw Error(ErrorCode::ShapeMismatch, "translation length must equal grid rank");
        }
        for (std::size_t t = 0; t < d; ++t) {
            std::fill(w.component(t).begin(), w.component(t).end(), (*options.translation)[t]);
        }
    }

    auto sample = [&](const std::array<double, 3>& x, double& intensity, std::int32_t& label) {
        intensity = 0.0;
        label = 0;
        double best = 0.5;
        for (std::size_t b = 0; b < blobs.size(); ++b) {
            double r2 = 0.0;
            for (std::size_t a = 0; a < d; ++a) {
                r2 += sq(x[a] - blobs[b].centre[a]);
            }
            const double g = std::exp(-0.5 * r2 / sq(blobs[b].sigma));
            intensity += g;
            if (g > best) {
                best = g;
                label = static_cast<std::int32_t>(b + 1);
            }
        }
    };

    ScalarVolume fixed(shape), moving(shape);
    std::vector<std::int32_t> fixed_labels(shape.voxel_count()), moving_labels(shape.voxel_count());
    for (std::size_t q = 0; q < shape.voxel_count(); ++q) {
        const Coord c = shape.coords(q);
        std::array<double, 3> x{0, 0, 0}, pulled{0, 0, 0};
        for (std::size_t a = 0; a < d; ++a) {
            x[a] = static_cast<double>(c[a]);
            pulled[a] = x[a] - w.component(a)[q];
        }
        sample(x, fixed[q], fixed_labels[q]);
        sample(pulled, moving[q], moving_labels[q]);
    }
    std::vector<std::int32_t> ids;
    for (std::size_t b = 0; b < blobs.size(); ++b) {
        ids.push_back(static_cast<std::int32_t>(b + 1));
    }
    return BlobPair{std::move(fixed), std::move(moving), LabelVolume(shape, std::move(fixed_labels), ids),
                    LabelVolume(shape, std::move(moving_labels), ids), std::move(w)};
}

} // namespace expjac
