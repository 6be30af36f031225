#include "expjac/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <Eigen/Dense>

namespace expjac {

namespace {

using Clock = std::chrono::steady_clock;

void require_same(const GridShape& a, const GridShape& b, const char* what)
{
    if (!a.same_extents(b)) {
        throw Error(ErrorCode::ShapeMismatch, std::string(what) + ": " + describe(a) + " vs " + describe(b));
    }
}

struct Sample {
    // Lower cell corner and fractional offset per axis.
    std::array<std::size_t, 3> base{0, 0, 0};
    std::array<double, 3> frac{0, 0, 0};
    std::array<bool, 3> clamped{false, false, false};
};

Sample locate(const GridShape& shape, const DisplacementField& phi, std::size_t q)
{
    Sample s;
    const Coord c = shape.coords(q);
    for (std::size_t a = 0; a < shape.rank(); ++a) {
        const double hi = static_cast<double>(shape.extent(a) - 1);
        double p = static_cast<double>(c[a]) + phi.component(a)[q];
        if (p < 0.0 || p > hi) {
            s.clamped[a] = true;
            p = std::clamp(p, 0.0, hi);
        }
        if (shape.extent(a) == 1) {
            s.base[a] = 0;
            s.frac[a] = 0.0;
            continue;
        }
        const auto cell = std::min(static_cast<std::size_t>(std::floor(p)), shape.extent(a) - 2);
        s.base[a] = cell;
        s.frac[a] = p - static_cast<double>(cell);
    }
    return s;
}

double corner_value(const ScalarVolume& v, const Sample& s, unsigned corner)
{
    Coord c{0, 0, 0};
    for (std::size_t a = 0; a < v.shape().rank(); ++a) {
        const bool upper = (corner >> a) & 1u;
        c[a] = std::min(s.base[a] + (upper ? 1 : 0), v.shape().extent(a) - 1);
    }
    return v.at(c);
}

} // namespace

double dice(const LabelVolume& a, const LabelVolume& b, std::int32_t id)
{
    require_same(a.shape(), b.shape(), "dice operands");
    if (!a.has_structure(id) && !b.has_structure(id)) {
        throw Error(ErrorCode::UnknownStructure, "structure " + std::to_string(id) + " is listed in neither volume");
    }
    std::size_t na = 0, nb = 0, both = 0;
    const auto la = a.labels();
    const auto lb = b.labels();
    for (std::size_t q = 0; q < la.size(); ++q) {
        const bool in_a = la[q] == id;
        const bool in_b = lb[q] == id;
        na += in_a;
        nb += in_b;
        both += in_a && in_b;
    }
    if (na + nb == 0) {
        return 1.0;
    }
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

std::vector<double> determinants(const JacobianField& jac, bool add_identity)
{
    const std::size_t d = jac.dim();
    std::vector<double> out(jac.voxel_count());
    Eigen::MatrixXd m(d, d);
    for (std::size_t q = 0; q < out.size(); ++q) {
        const auto e = jac.matrix(q);
        for (std::size_t r = 0; r < d; ++r) {
            for (std::size_t c = 0; c < d; ++c) {
                m(r, c) = e[r * d + c] + (add_identity && r == c ? 1.0 : 0.0);
            }
        }
        out[q] = d == 2 ? m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0) : m.determinant();
    }
    return out;
}

NpjPercentages npj_percentages(const DisplacementField& phi, const StencilScheme&)
{
    const JacobianField jac = jacobian(phi);
    NpjPercentages out;
    out.voxels = jac.voxel_count();
    for (const double det : determinants(jac, false)) {
        out.displacement_count += det <= 0.0;
    }
    for (const double det : determinants(jac, true)) {
        out.transform_count += det <= 0.0;
    }
    const double n = static_cast<double>(out.voxels);
    out.displacement_pct = 100.0 * static_cast<double>(out.displacement_count) / n;
    out.transform_pct = 100.0 * static_cast<double>(out.transform_count) / n;
    return out;
}

WarpWithGradient warp_with_gradient(const ScalarVolume& volume, const DisplacementField& phi)
{
    const auto& shape = volume.shape();
    require_same(shape, phi.shape(), "warp operands");
    const std::size_t d = shape.rank();
    const unsigned corners = 1u << d;
    WarpWithGradient out{ScalarVolume(shape), std::vector<ScalarVolume>(d, ScalarVolume(shape))};
    for (std::size_t q = 0; q < shape.voxel_count(); ++q) {
        const Sample s = locate(shape, phi, q);
        double value = 0.0;
        std::array<double, 3> grad{0, 0, 0};
        for (unsigned corner = 0; corner < corners; ++corner) {
            const double v = corner_value(volume, s, corner);
            double w = 1.0;
            std::array<double, 3> dw{1, 1, 1};
            for (std::size_t a = 0; a < d; ++a) {
                const bool upper = (corner >> a) & 1u;
                const double wa = upper ? s.frac[a] : 1.0 - s.frac[a];
                const double da = upper ? 1.0 : -1.0;
                w *= wa;
                for (std::size_t b = 0; b < d; ++b) {
                    dw[b] *= (b == a) ? da : wa;
                }
            }
            value += w * v;
            for (std::size_t a = 0; a < d; ++a) {
                grad[a] += dw[a] * v;
            }
        }
        out.warped[q] = value;
        for (std::size_t a = 0; a < d; ++a) {
            out.gradient[a][q] = s.clamped[a] ? 0.0 : grad[a];
        }
    }
    return out;
}

ScalarVolume warp(const ScalarVolume& volume, const DisplacementField& phi)
{
    return warp_with_gradient(volume, phi).warped;
}

LabelVolume warp(const LabelVolume& labels, const DisplacementField& phi)
{
    const auto& shape = labels.shape();
    require_same(shape, phi.shape(), "warp operands");
    std::vector<std::int32_t> out(shape.voxel_count());
    for (std::size_t q = 0; q < out.size(); ++q) {
        const Coord c = shape.coords(q);
        Coord src{0, 0, 0};
        for (std::size_t a = 0; a < shape.rank(); ++a) {
            const double hi = static_cast<double>(shape.extent(a) - 1);
            const double p = std::clamp(static_cast<double>(c[a]) + phi.component(a)[q], 0.0, hi);
            src[a] = static_cast<std::size_t>(std::lround(p));
        }
        out[q] = labels.labels()[shape.linear(src)];
    }
    return LabelVolume(shape, std::move(out), labels.structures());
}

nlohmann::json MetricsReport::to_json() const
{
    nlohmann::json j;
    nlohmann::json per = nlohmann::json::object();
    for (const auto& [id, v] : dice_per_structure) {
        per[std::to_string(id)] = v;
    }
    j["dice_per_structure"] = per;
    j["mean_dice"] = dice_per_structure.empty() ? nlohmann::json(nullptr) : nlohmann::json(mean_dice);
    j["npj_displacement_pct"] = npj_displacement_pct;
    j["npj_transform_pct"] = npj_transform_pct;
    j["input_npj_displacement_pct"] = input_npj_displacement_pct ? nlohmann::json(*input_npj_displacement_pct)
                                                                 : nlohmann::json(nullptr);
    j["input_npj_transform_pct"] = input_npj_transform_pct ? nlohmann::json(*input_npj_transform_pct)
                                                           : nlohmann::json(nullptr);
    j["stencil"] = {{"interior", interior_name(stencil.interior)}, {"boundary", boundary_name(stencil.boundary)}};
    j["timings"] = timings;
    return j;
}

MetricsReport evaluate(const LabelVolume& fixed_labels, const LabelVolume& moving_labels,
                       const DisplacementField& phi_p, const DisplacementField* phi,
                       std::vector<std::int32_t> structures)
{
    require_same(fixed_labels.shape(), moving_labels.shape(), "label volumes");
    require_same(fixed_labels.shape(), phi_p.shape(), "labels and phi_p");
    if (phi) {
        require_same(phi->shape(), phi_p.shape(), "phi and phi_p");
    }
    if (structures.empty()) {
        structures = fixed_labels.structures();
    }
    MetricsReport report;

    auto start = Clock::now();
    const LabelVolume warped = warp(moving_labels, phi_p);
    report.timings["warp"] = std::chrono::duration<double>(Clock::now() - start).count();

    start = Clock::now();
    double sum = 0.0;
    for (const auto id : structures) {
        const double v = dice(fixed_labels, warped, id);
        report.dice_per_structure[id] = v;
        sum += v;
    }
    report.mean_dice = structures.empty() ? 0.0 : sum / static_cast<double>(structures.size());
    report.timings["dice"] = std::chrono::duration<double>(Clock::now() - start).count();

    start = Clock::now();
    const NpjPercentages out_npj = npj_percentages(phi_p, report.stencil);
    report.npj_displacement_pct = out_npj.displacement_pct;
    report.npj_transform_pct = out_npj.transform_pct;
    if (phi) {
        const NpjPercentages in_npj = npj_percentages(*phi, report.stencil);
        report.input_npj_displacement_pct = in_npj.displacement_pct;
        report.input_npj_transform_pct = in_npj.transform_pct;
    }
    report.timings["npj"] = std::chrono::duration<double>(Clock::now() - start).count();
    return report;
}

} // namespace expjac
