#include "expjac/demo.hpp"

#include <cmath>

#include "expjac/diffops.hpp"
#include "expjac/synth.hpp"

namespace expjac {

namespace {

constexpr double kNccEps = 1e-5;

SimilarityValue similarity(const ScalarVolume& fixed, const ScalarVolume& warped, const DemoConfig& cfg)
{
    return cfg.similarity == Similarity::mse ? mse_similarity(fixed, warped)
                                             : ncc_similarity(fixed, warped, cfg.ncc_window);
}

} // namespace

DemoObjective evaluate_demo_objective(const ScalarVolume& fixed, const ScalarVolume& moving,
                                      const DisplacementField& phi, const DemoConfig& cfg, bool with_gradient)
{
    const auto& shape = phi.shape();
    const std::size_t d = shape.rank();
    const double n = static_cast<double>(shape.voxel_count());

    DemoObjective obj;
    obj.layer = postprocess(phi);
    const DisplacementField& phi_p = obj.layer.phi_p;

    const WarpWithGradient w = warp_with_gradient(moving, phi_p);
    const SimilarityValue sim = similarity(fixed, w.warped, cfg);

    const JacobianField jac_p = jacobian(phi_p);
    std::vector<double> sq(jac_p.data().size());
    for (std::size_t i = 0; i < sq.size(); ++i) {
        sq[i] = jac_p.data()[i] * jac_p.data()[i];
    }
    const double reg = pairwise_sum(sq) / n;
    const double lp = obj.layer.loss_p / n;

    obj.terms.similarity = sim.value;
    obj.terms.regularizer = reg;
    obj.terms.loss_p = lp;
    obj.terms.total = sim.value + cfg.lambda * reg + cfg.lambda_p * lp;
    if (!with_gradient) {
        return obj;
    }

    // Cotangent of phi_p from the similarity and smoothness terms.
    JacobianField reg_bar(shape, d);
    for (std::size_t i = 0; i < reg_bar.data().size(); ++i) {
        reg_bar.data()[i] = cfg.lambda * 2.0 * jac_p.data()[i] / n;
    }
    DisplacementField phi_p_bar = jacobian_adjoint(reg_bar);
    for (std::size_t c = 0; c < d; ++c) {
        auto comp = phi_p_bar.component(c);
        for (std::size_t q = 0; q < comp.size(); ++q) {
            comp[q] += sim.gradient[q] * w.gradient[c][q];
        }
    }
    obj.gradient = postprocess_vjp(phi, phi_p_bar, cfg.lambda_p / n);
    return obj;
}

Similarity parse_similarity(const std::string& name)
{
    if (name == "mse") return Similarity::mse;
    if (name == "ncc") return Similarity::ncc;
    throw Error(ErrorCode::InvalidArgument, "unknown similarity '" + name + "'");
}

Optimizer parse_optimizer(const std::string& name)
{
    if (name == "adam") return Optimizer::adam;
    if (name == "gd") return Optimizer::gd;
    throw Error(ErrorCode::InvalidArgument, "unknown optimizer '" + name + "'");
}

void DemoConfig::check() const
{
    if (!(lambda >= 0.0) || !(lambda_p >= 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "lambda and lambda_p must be non-negative");
    }
    if (steps < 1) {
        throw Error(ErrorCode::InvalidArgument, "steps must be at least 1");
    }
    if (ncc_window < 1 || ncc_window % 2 == 0) {
        throw Error(ErrorCode::InvalidArgument, "ncc window must be a positive odd integer");
    }
    if (!(learning_rate > 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "learning rate must be positive");
    }
}

SimilarityValue mse_similarity(const ScalarVolume& fixed, const ScalarVolume& warped)
{
    if (!fixed.shape().same_extents(warped.shape())) {
        throw Error(ErrorCode::ShapeMismatch, "similarity operands differ in shape");
    }
    const double n = static_cast<double>(fixed.size());
    SimilarityValue out{0.0, ScalarVolume(fixed.shape())};
    std::vector<double> sq(fixed.size());
    for (std::size_t q = 0; q < fixed.size(); ++q) {
        const double diff = warped[q] - fixed[q];
        sq[q] = diff * diff;
        out.gradient[q] = 2.0 * diff / n;
    }
    out.value = pairwise_sum(sq) / n;
    return out;
}

ScalarVolume box_sum(const ScalarVolume& v, int window)
{
    const auto r = static_cast<std::size_t>(window / 2);
    ScalarVolume out(v);
    std::vector<double> prefix;
    for (std::size_t a = 0; a < v.shape().rank(); ++a) {
        ScalarVolume next(v.shape());
        for_each_line(v.shape(), a, [&](std::size_t off, std::size_t stride, std::size_t n) {
            prefix.assign(n + 1, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                prefix[i + 1] = prefix[i] + out[off + i * stride];
            }
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t lo = i >= r ? i - r : 0;
                const std::size_t hi = std::min(n, i + r + 1);
                next[off + i * stride] = prefix[hi] - prefix[lo];
            }
        });
        out = std::move(next);
    }
    return out;
}

SimilarityValue ncc_similarity(const ScalarVolume& fixed, const ScalarVolume& warped, int window)
{
    if (!fixed.shape().same_extents(warped.shape())) {
        throw Error(ErrorCode::ShapeMismatch, "similarity operands differ in shape");
    }
    if (window < 1 || window % 2 == 0) {
        throw Error(ErrorCode::InvalidArgument, "ncc window must be a positive odd integer");
    }
    const auto& shape = fixed.shape();
    const std::size_t count = fixed.size();
    const double win = std::pow(static_cast<double>(window), static_cast<double>(shape.rank()));

    ScalarVolume ii(shape), jj(shape), ij(shape);
    for (std::size_t q = 0; q < count; ++q) {
        ii[q] = fixed[q] * fixed[q];
        jj[q] = warped[q] * warped[q];
        ij[q] = fixed[q] * warped[q];
    }
    const ScalarVolume i_sum = box_sum(fixed, window);
    const ScalarVolume j_sum = box_sum(warped, window);
    const ScalarVolume i2 = box_sum(ii, window);
    const ScalarVolume j2 = box_sum(jj, window);
    const ScalarVolume ij_sum = box_sum(ij, window);

    ScalarVolume alpha(shape), alpha_i(shape), beta(shape), beta_j(shape);
    std::vector<double> cc(count);
    for (std::size_t p = 0; p < count; ++p) {
        const double i_mean = i_sum[p] / win;
        const double j_mean = j_sum[p] / win;
        const double cross = ij_sum[p] - i_mean * j_sum[p];
        const double i_var = i2[p] - i_mean * i_sum[p];
        const double j_var = j2[p] - j_mean * j_sum[p];
        const double denom = i_var * j_var + kNccEps;
        cc[p] = cross * cross / denom;
        alpha[p] = 2.0 * cross / denom;
        alpha_i[p] = alpha[p] * i_mean;
        beta[p] = 2.0 * cross * cross * i_var / (denom * denom);
        beta_j[p] = beta[p] * j_mean;
    }
    const double n = static_cast<double>(count);
    SimilarityValue out{-pairwise_sum(cc) / n, ScalarVolume(shape)};

    const ScalarVolume a = box_sum(alpha, window);
    const ScalarVolume ai = box_sum(alpha_i, window);
    const ScalarVolume b = box_sum(beta, window);
    const ScalarVolume bj = box_sum(beta_j, window);
    for (std::size_t x = 0; x < count; ++x) {
        const double dcc = fixed[x] * a[x] - ai[x] - warped[x] * b[x] + bj[x];
        out.gradient[x] = -dcc / n;
    }
    return out;
}

nlohmann::json DemoResult::to_json() const
{
    nlohmann::json trace_json = nlohmann::json::array();
    for (const auto& s : trace) {
        trace_json.push_back({{"step", s.step},
                              {"total", s.total},
                              {"similarity", s.similarity},
                              {"regularizer", s.regularizer},
                              {"loss_p", s.loss_p}});
    }
    nlohmann::json j{{"trace", trace_json},
                     {"final",
                      {{"total", final_terms.total},
                       {"similarity", final_terms.similarity},
                       {"regularizer", final_terms.regularizer},
                       {"loss_p", final_terms.loss_p}}},
                     {"npj_phi", {{"displacement_pct", npj_phi.displacement_pct},
                                  {"transform_pct", npj_phi.transform_pct}}},
                     {"npj_phi_p", {{"displacement_pct", npj_phi_p.displacement_pct},
                                    {"transform_pct", npj_phi_p.transform_pct}}}};
    j["report"] = report ? report->to_json() : nlohmann::json(nullptr);
    return j;
}

namespace {

// A field that has blown up surfaces as NonFiniteInput somewhere inside the
// layer; report it as divergence of the optimisation.
DemoObjective evaluate_or_diverge(const ScalarVolume& fixed, const ScalarVolume& moving, const DisplacementField& phi,
                                  const DemoConfig& cfg, bool with_gradient, int step)
{
    try {
        return evaluate_demo_objective(fixed, moving, phi, cfg, with_gradient);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::NonFiniteInput) {
            throw;
        }
        throw Error(ErrorCode::Diverged, "optimisation diverged at step " + std::to_string(step) + ": " + e.what());
    }
}

} // namespace

DemoResult run_demo_registration(const ScalarVolume& fixed, const ScalarVolume& moving, const DemoConfig& cfg,
                                 const LabelVolume* fixed_labels, const LabelVolume* moving_labels)
{
    cfg.check();
    const auto& shape = fixed.shape();
    if (shape.rank() != 2) {
        throw Error(ErrorCode::InvalidArgument, "the registration demo is two-dimensional");
    }
    if (!shape.same_extents(moving.shape())) {
        throw Error(ErrorCode::ShapeMismatch, "fixed and moving images differ in shape");
    }
    const std::size_t d = shape.rank();

    DisplacementField phi = cfg.init_amplitude > 0.0 ? random_smooth(shape, cfg.init_amplitude, cfg.seed)
                                                     : DisplacementField(shape);
    phi.set_zero_boundary(false);
    std::vector<std::vector<double>> m(d, std::vector<double>(shape.voxel_count(), 0.0));
    std::vector<std::vector<double>> v(m);
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    DemoResult result;
    for (int step = 0; step < cfg.steps; ++step) {
        DemoObjective obj = evaluate_or_diverge(fixed, moving, phi, cfg, true, step);
        obj.terms.step = step;
        if (!std::isfinite(obj.terms.total)) {
            throw Error(ErrorCode::Diverged, "objective became non-finite at step " + std::to_string(step));
        }
        result.trace.push_back(obj.terms);

        const double t = static_cast<double>(step + 1);
        for (std::size_t c = 0; c < d; ++c) {
            auto p = phi.component(c);
            const auto g = obj.gradient.component(c);
            for (std::size_t q = 0; q < p.size(); ++q) {
                if (cfg.optimizer == Optimizer::gd) {
                    p[q] -= cfg.learning_rate * g[q];
                    continue;
                }
                m[c][q] = beta1 * m[c][q] + (1.0 - beta1) * g[q];
                v[c][q] = beta2 * v[c][q] + (1.0 - beta2) * g[q] * g[q];
                const double m_hat = m[c][q] / (1.0 - std::pow(beta1, t));
                const double v_hat = v[c][q] / (1.0 - std::pow(beta2, t));
                p[q] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + eps);
            }
        }
    }

    DemoObjective last = evaluate_or_diverge(fixed, moving, phi, cfg, false, cfg.steps);
    if (!std::isfinite(last.terms.total)) {
        throw Error(ErrorCode::Diverged, "objective became non-finite after the final step");
    }
    last.terms.step = cfg.steps;
    result.final_terms = last.terms;
    result.npj_phi = npj_percentages(phi);
    result.npj_phi_p = npj_percentages(last.layer.phi_p);
    if (fixed_labels && moving_labels) {
        result.report = evaluate(*fixed_labels, *moving_labels, last.layer.phi_p, &phi, {});
        for (const auto& [stage, secs] : last.layer.timings) {
            result.report->timings["layer_" + stage] = secs;
        }
    }
    result.phi = std::move(phi);
    result.phi_p = std::move(last.layer.phi_p);
    return result;
}

} // namespace expjac
