// expjac command-line entry point.
//
// Exit status: 0 success, 1 numerical failure, 2 I/O or usage error.

#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "expjac/demo.hpp"
#include "expjac/errors.hpp"
#include "expjac/fields.hpp"
#include "expjac/metrics.hpp"
#include "expjac/postprocess.hpp"
#include "expjac/synth.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitNumerical = 1;
constexpr int kExitUsage = 2;

int exit_code_for(expjac::ErrorCode code)
{
    using expjac::ErrorCode;
    switch (code) {
    case ErrorCode::NonFiniteInput:
    case ErrorCode::PlanMismatch:
    case ErrorCode::Diverged:
        return kExitNumerical;
    default:
        return kExitUsage;
    }
}

void emit(const json& j, const std::string& out)
{
    const std::string text = j.dump(2) + "\n";
    if (out.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream f(out, std::ios::binary);
    if (!f || !(f << text)) {
        throw expjac::Error(expjac::ErrorCode::IoFailure, "cannot write " + out);
    }
}

json npj_json(const expjac::NpjPercentages& n)
{
    return {{"displacement_pct", n.displacement_pct},
            {"transform_pct", n.transform_pct},
            {"displacement_count", n.displacement_count},
            {"transform_count", n.transform_count},
            {"voxels", n.voxels}};
}

json shape_json(const expjac::GridShape& s)
{
    return {{"dims", s.dims()}, {"spacing", s.spacing()}};
}

expjac::MatExpConfig matexp_from(const std::string& method, int max_terms, double tol)
{
    expjac::MatExpConfig cfg;
    if (method == "taylor") {
        cfg.method = expjac::MatExpConfig::Method::taylor_series;
    } else if (method == "scaling-squaring") {
        cfg.method = expjac::MatExpConfig::Method::scaling_squaring_taylor;
    } else {
        throw expjac::Error(expjac::ErrorCode::InvalidArgument, "unknown expm method '" + method + "'");
    }
    cfg.max_terms = max_terms;
    cfg.tol = tol;
    cfg.check();
    return cfg;
}

json provenance(const std::string& command, json params)
{
    return {{"tool", "expjac"}, {"command", command}, {"parameters", std::move(params)}};
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
    std::string kind;
    std::vector<std::size_t> shape;
    std::vector<double> spacing;
    std::uint64_t seed = 0;
    double amplitude = 1.0;
    std::optional<double> ratio;
    double frequency = 2.0;
    std::string family = "z2";
    std::vector<double> matrix;
    double displacement = 2.0;
    std::size_t blob_count = 3;
    std::vector<double> translation;
    std::string precision = "f64";
    std::string field_out;
    std::string out;
};

expjac::Precision parse_precision(const std::string& p)
{
    if (p == "f32") return expjac::Precision::f32;
    if (p == "f64") return expjac::Precision::f64;
    throw expjac::Error(expjac::ErrorCode::InvalidArgument, "precision must be f32 or f64");
}

void write_with_sidecar(const expjac::DisplacementField& f, const fs::path& path, const json& prov)
{
    expjac::write_field(f, path);
    expjac::write_sidecar(path, prov);
}

int run_synth(const SynthArgs& a)
{
    const expjac::GridShape shape(a.shape, a.spacing);
    const expjac::Precision precision = parse_precision(a.precision);
    json params{{"kind", a.kind}, {"shape", a.shape}, {"seed", a.seed}, {"precision", a.precision}};
    json report{{"kind", a.kind}, {"seed", a.seed}};
    std::optional<expjac::DisplacementField> field;

    if (a.kind == "sinusoidal_fold") {
        const double amp = a.ratio ? expjac::fold_amplitude_for_ratio(shape, *a.ratio, a.frequency) : a.amplitude;
        expjac::FoldField fold = expjac::sinusoidal_fold(shape, amp, a.frequency, a.seed);
        params["amplitude"] = amp;
        params["frequency"] = a.frequency;
        report["amplitude"] = amp;
        report["frequency"] = a.frequency;
        report["slope_ratio"] = fold.slope_ratio;
        report["analytic_fold_count"] = fold.analytic_fold_count;
        field = std::move(fold.field);
    } else if (a.kind == "random_smooth") {
        field = expjac::random_smooth(shape, a.amplitude, a.seed);
        params["amplitude"] = a.amplitude;
    } else if (a.kind == "harmonic_conjugate_2d") {
        field = expjac::harmonic_conjugate_2d(shape, expjac::parse_harmonic_family(a.family), a.seed);
        params["family"] = a.family;
    } else if (a.kind == "linear") {
        const std::size_t d = shape.rank();
        if (a.matrix.size() != d * d) {
            throw expjac::Error(expjac::ErrorCode::InvalidArgument,
                                "--matrix needs " + std::to_string(d * d) + " row-major entries");
        }
        Eigen::MatrixXd m(d, d);
        for (std::size_t r = 0; r < d; ++r) {
            for (std::size_t c = 0; c < d; ++c) {
                m(r, c) = a.matrix[r * d + c];
            }
        }
        field = expjac::linear_field(shape, m);
        params["matrix"] = a.matrix;
    } else if (a.kind == "gaussian_blob_pair") {
        expjac::BlobPairOptions opts;
        opts.blob_count = a.blob_count;
        if (!a.translation.empty()) {
            opts.translation = a.translation;
        }
        const expjac::BlobPair pair = expjac::gaussian_blob_pair(shape, a.displacement, a.seed, opts);
        params["displacement"] = a.displacement;
        params["blob_count"] = a.blob_count;
        if (!a.translation.empty()) {
            params["translation"] = a.translation;
        }
        if (a.field_out.empty()) {
            throw expjac::Error(expjac::ErrorCode::InvalidArgument, "gaussian_blob_pair needs --field-out PREFIX");
        }
        const json prov = provenance("synth", params);
        const std::string p = a.field_out;
        json files{{"fixed", p + ".fixed.dfld"},
                   {"moving", p + ".moving.dfld"},
                   {"fixed_labels", p + ".fixed_labels.dfld"},
                   {"moving_labels", p + ".moving_labels.dfld"},
                   {"warp", p + ".warp.dfld"}};
        expjac::write_volume(pair.fixed, files["fixed"].get<std::string>(), precision);
        expjac::write_volume(pair.moving, files["moving"].get<std::string>(), precision);
        expjac::write_labels(pair.fixed_labels, files["fixed_labels"].get<std::string>());
        expjac::write_labels(pair.moving_labels, files["moving_labels"].get<std::string>());
        write_with_sidecar(pair.warp.with_precision(precision), files["warp"].get<std::string>(), prov);
        for (const auto& [key, path] : files.items()) {
            if (key != "warp") {
                expjac::write_sidecar(path.get<std::string>(), prov);
            }
        }
        report["files"] = files;
        report["structures"] = pair.fixed_labels.structures();
        report["shape"] = shape_json(shape);
        emit(report, a.out);
        return kExitOk;
    } else {
        throw expjac::Error(expjac::ErrorCode::InvalidArgument, "unknown synth kind '" + a.kind + "'");
    }

    expjac::DisplacementField f = field->with_precision(precision);
    report["shape"] = shape_json(f.shape());
    report["npj"] = npj_json(expjac::npj_percentages(f));
    if (!a.field_out.empty()) {
        write_with_sidecar(f, a.field_out, provenance("synth", params));
        report["files"] = {{"field", a.field_out}};
    }
    emit(report, a.out);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// postprocess

struct PostprocessArgs {
    std::string input;
    std::string field_out;
    std::string method = "scaling-squaring";
    int max_terms = 18;
    double tol = 0.0;
    std::string out;
};

int run_postprocess(const PostprocessArgs& a)
{
    const auto t0 = std::chrono::steady_clock::now();
    const expjac::DisplacementField phi = expjac::read_field(a.input);
    expjac::PostprocessConfig cfg;
    const double tol = a.tol > 0.0 ? a.tol : expjac::MatExpConfig::for_precision(phi.precision()).tol;
    cfg.matexp = matexp_from(a.method, a.max_terms, tol);
    expjac::LayerOutput out = expjac::postprocess(phi, cfg);

    const expjac::NpjPercentages before = expjac::npj_percentages(phi, cfg.stencil);
    const expjac::NpjPercentages after = expjac::npj_percentages(out.phi_p, cfg.stencil);

    if (!a.field_out.empty()) {
        json params{{"input", a.input}, {"method", a.method}, {"max_terms", a.max_terms}, {"tol", tol}};
        write_with_sidecar(out.phi_p, a.field_out, provenance("postprocess", params));
    }

    expjac::MetricsReport report;
    report.npj_displacement_pct = after.displacement_pct;
    report.npj_transform_pct = after.transform_pct;
    report.input_npj_displacement_pct = before.displacement_pct;
    report.input_npj_transform_pct = before.transform_pct;
    report.stencil = cfg.stencil;
    report.timings = out.timings;
    report.timings["wall"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    json j = report.to_json();
    j["loss_p"] = out.loss_p;
    j["loss_p_mean"] = out.loss_p / static_cast<double>(phi.shape().voxel_count());
    j["npj_before"] = npj_json(before);
    j["npj_after"] = npj_json(after);
    j["shape"] = shape_json(phi.shape());
    j["precision"] = phi.precision() == expjac::Precision::f32 ? "f32" : "f64";
    j["files"] = json::object();
    if (!a.field_out.empty()) {
        j["files"]["phi_p"] = a.field_out;
    }
    emit(j, a.out);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// metrics

struct MetricsArgs {
    std::string fixed_labels;
    std::string moving_labels;
    std::string phi_p;
    std::string phi;
    std::vector<std::int32_t> structures;
    std::string out;
};

int run_metrics(const MetricsArgs& a)
{
    const expjac::LabelVolume fixed = expjac::read_labels(a.fixed_labels);
    const expjac::LabelVolume moving = expjac::read_labels(a.moving_labels);
    const expjac::DisplacementField phi_p = expjac::read_field(a.phi_p);
    std::optional<expjac::DisplacementField> phi;
    if (!a.phi.empty()) {
        phi = expjac::read_field(a.phi);
    }
    const expjac::MetricsReport report =
        expjac::evaluate(fixed, moving, phi_p, phi ? &*phi : nullptr, a.structures);
    emit(report.to_json(), a.out);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// lemma-check

struct LemmaArgs {
    std::string input;
    std::string family;
    std::vector<std::size_t> extents{33, 65, 129};
    double tolerance = 1e-3;
    std::string out;
};

int run_lemma(const LemmaArgs& a)
{
    if (a.input.empty() == a.family.empty()) {
        throw expjac::Error(expjac::ErrorCode::InvalidArgument, "give exactly one of --input or --family");
    }
    expjac::LemmaReport report;
    if (!a.family.empty()) {
        report = expjac::lemma_check_family(expjac::parse_harmonic_family(a.family), a.extents);
    } else {
        report = expjac::lemma_check_field(expjac::read_field(a.input), a.input, a.tolerance);
    }
    emit(report.to_json(), a.out);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// demo-register

struct DemoArgs {
    std::string fixed;
    std::string moving;
    std::string fixed_labels;
    std::string moving_labels;
    std::string similarity = "mse";
    std::string optimizer = "adam";
    std::string field_out;
    std::string trace_csv;
    std::string out;
    expjac::DemoConfig cfg;
};

void write_trace_csv(const expjac::DemoResult& r, const std::string& path)
{
    std::ofstream f(path);
    f.precision(17);
    f << "step,total,similarity,regularizer,loss_p\n";
    for (const auto& s : r.trace) {
        f << s.step << ',' << s.total << ',' << s.similarity << ',' << s.regularizer << ',' << s.loss_p << '\n';
    }
    if (!f) {
        throw expjac::Error(expjac::ErrorCode::IoFailure, "cannot write " + path);
    }
}

int run_demo(DemoArgs a)
{
    a.cfg.similarity = expjac::parse_similarity(a.similarity);
    a.cfg.optimizer = expjac::parse_optimizer(a.optimizer);
    a.cfg.check();
    const expjac::ScalarVolume fixed = expjac::read_volume(a.fixed);
    const expjac::ScalarVolume moving = expjac::read_volume(a.moving);
    if (a.fixed_labels.empty() != a.moving_labels.empty()) {
        throw expjac::Error(expjac::ErrorCode::InvalidArgument, "give both label volumes or neither");
    }
    std::optional<expjac::LabelVolume> fl, ml;
    if (!a.fixed_labels.empty()) {
        fl = expjac::read_labels(a.fixed_labels);
        ml = expjac::read_labels(a.moving_labels);
    }
    const expjac::DemoResult result =
        expjac::run_demo_registration(fixed, moving, a.cfg, fl ? &*fl : nullptr, ml ? &*ml : nullptr);

    json j = result.to_json();
    j["config"] = {{"lambda", a.cfg.lambda},
                   {"lambda_p", a.cfg.lambda_p},
                   {"similarity", a.similarity},
                   {"ncc_window", a.cfg.ncc_window},
                   {"steps", a.cfg.steps},
                   {"learning_rate", a.cfg.learning_rate},
                   {"optimizer", a.optimizer},
                   {"init_amplitude", a.cfg.init_amplitude},
                   {"seed", a.cfg.seed}};
    if (!a.field_out.empty()) {
        const json prov = provenance("demo-register", j["config"]);
        const std::string phi_path = a.field_out + ".phi.dfld";
        const std::string phi_p_path = a.field_out + ".phi_p.dfld";
        write_with_sidecar(result.phi, phi_path, prov);
        write_with_sidecar(result.phi_p, phi_p_path, prov);
        j["files"] = {{"phi", phi_path}, {"phi_p", phi_p_path}};
    }
    if (!a.trace_csv.empty()) {
        write_trace_csv(result, a.trace_csv);
    }
    emit(j, a.out);
    return kExitOk;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Exponentiated-Jacobian post-processing of displacement fields"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate a synthetic field or image pair");
    s->add_option("--kind", synth.kind,
                  "sinusoidal_fold | random_smooth | harmonic_conjugate_2d | linear | gaussian_blob_pair")
        ->required();
    s->add_option("--shape", synth.shape, "Grid extents, e.g. --shape 32 32 32")->required()->delimiter(',');
    s->add_option("--spacing", synth.spacing, "Grid spacing per axis")->delimiter(',');
    s->add_option("--seed", synth.seed, "Random seed");
    s->add_option("--amplitude", synth.amplitude, "Amplitude in voxels");
    s->add_option("--ratio", synth.ratio, "sinusoidal_fold: slope ratio a*k (overrides --amplitude)");
    s->add_option("--frequency", synth.frequency, "sinusoidal_fold: periods across axis 0 (multiple of 1/2)");
    s->add_option("--family", synth.family, "harmonic_conjugate_2d: z2 | z3 | exp");
    s->add_option("--matrix", synth.matrix, "linear: row-major matrix entries")->delimiter(',');
    s->add_option("--displacement", synth.displacement, "gaussian_blob_pair: warp magnitude in voxels");
    s->add_option("--blob-count", synth.blob_count, "gaussian_blob_pair: number of blobs");
    s->add_option("--translation", synth.translation, "gaussian_blob_pair: constant warp instead of random")
        ->delimiter(',');
    s->add_option("--precision", synth.precision, "f32 | f64");
    s->add_option("--field-out", synth.field_out, "DFLD output path (prefix for gaussian_blob_pair)");
    s->add_option("--out", synth.out, "JSON output path (default stdout)");

    PostprocessArgs pp;
    auto* p = app.add_subcommand("postprocess", "Apply the exponentiated-Jacobian layer to a field");
    p->add_option("--input", pp.input, "Input DFLD field")->required();
    p->add_option("--field-out", pp.field_out, "Output DFLD path for phi_p");
    p->add_option("--method", pp.method, "taylor | scaling-squaring");
    p->add_option("--max-terms", pp.max_terms, "Maximum Taylor terms");
    p->add_option("--tol", pp.tol, "Taylor truncation tolerance (default by precision)");
    p->add_option("--out", pp.out, "JSON output path (default stdout)");

    MetricsArgs mt;
    auto* m = app.add_subcommand("metrics", "Dice and NPJ of a post-processed field");
    m->add_option("--fixed-labels", mt.fixed_labels, "Fixed label DFLD")->required();
    m->add_option("--moving-labels", mt.moving_labels, "Moving label DFLD")->required();
    m->add_option("--phi-p", mt.phi_p, "Post-processed field DFLD")->required();
    m->add_option("--phi", mt.phi, "Layer input field DFLD");
    m->add_option("--structures", mt.structures, "Structure ids (default: all fixed structures)")
        ->delimiter(',');
    m->add_option("--out", mt.out, "JSON output path (default stdout)");

    LemmaArgs lm;
    auto* l = app.add_subcommand("lemma-check", "Check the conservative-exponential hypothesis");
    l->add_option("--input", lm.input, "Field DFLD to check");
    l->add_option("--family", lm.family, "Harmonic family for a refinement sweep: z2 | z3 | exp");
    l->add_option("--extents", lm.extents, "Grid extents of the sweep")->delimiter(',');
    l->add_option("--tolerance", lm.tolerance, "Residual threshold for a single field");
    l->add_option("--out", lm.out, "JSON output path (default stdout)");

    DemoArgs dm;
    auto* d = app.add_subcommand("demo-register", "Toy 2D registration with the layer in the loop");
    d->add_option("--fixed", dm.fixed, "Fixed image DFLD")->required();
    d->add_option("--moving", dm.moving, "Moving image DFLD")->required();
    d->add_option("--fixed-labels", dm.fixed_labels, "Fixed label DFLD");
    d->add_option("--moving-labels", dm.moving_labels, "Moving label DFLD");
    d->add_option("--lambda", dm.cfg.lambda, "Smoothness weight");
    d->add_option("--lambda-p", dm.cfg.lambda_p, "Reconstruction-loss weight");
    d->add_option("--similarity", dm.similarity, "mse | ncc");
    d->add_option("--ncc-window", dm.cfg.ncc_window, "NCC window width (odd)");
    d->add_option("--steps", dm.cfg.steps, "Optimisation steps");
    d->add_option("--learning-rate", dm.cfg.learning_rate, "Step size");
    d->add_option("--optimizer", dm.optimizer, "adam | gd");
    d->add_option("--init-amplitude", dm.cfg.init_amplitude, "Peak magnitude of the initial field");
    d->add_option("--seed", dm.cfg.seed, "Random seed");
    d->add_option("--field-out", dm.field_out, "Prefix for phi and phi_p DFLD outputs");
    d->add_option("--trace-csv", dm.trace_csv, "Per-step loss trace as CSV");
    d->add_option("--out", dm.out, "JSON output path (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (s->parsed()) return run_synth(synth);
        if (p->parsed()) return run_postprocess(pp);
        if (m->parsed()) return run_metrics(mt);
        if (l->parsed()) return run_lemma(lm);
        if (d->parsed()) return run_demo(dm);
    } catch (const expjac::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
