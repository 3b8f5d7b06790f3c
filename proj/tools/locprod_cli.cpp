// locprod command-line front end: estimate | cv | infer | test-invariance |
// decompose | simulate | coverage. One JSON config per run; flags override
// config keys; every run writes a manifest that can be fed back as --config.

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "locprod/locprod.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;
using locprod::json;

namespace {

struct RunConfig {
    std::string command;
    std::string input;
    locprod::PanelSchema schema;
    locprod::TechnologySpec tech;
    std::string tech_name = "cobb-douglas";
    json h1 = 0;  // integer or "cv"
    json h2 = 0;
    std::vector<int> h1_grid, h2_grid;
    int B = 199;
    double alpha = 0.05;
    std::uint64_t seed = 42;
    int threads = 0;
    bool bias_correct = true;
    std::string sidedness = "two_sided";
    bool pooled = true;
    bool store_draws = false;
    std::vector<locprod::Functional> functionals;
    std::vector<std::vector<double>> extra_targets;
    std::string output_dir = "out";
    // simulation block
    int sim_n = 100, sim_T = 10, sim_Q = 100, sim_B = 199;
    std::string sim_estimator = "kernel";
    int sim_h = 0;  // 0 = shortcut rule
    bool sim_invariant = false;
    double sim_sigma_eta = 0.07, sim_sigma_zeta = 0.04;

    bool seed_from_env = false;
    bool threads_from_env = false;
    json raw;  // resolved config echo for the manifest
};

locprod::PanelSchema parse_schema(const json& js) {
    locprod::PanelSchema s;
    if (!js.is_object()) throw locprod::ConfigError("schema must be a JSON object");
    auto str = [&](const char* key, std::string& into, bool required) {
        if (js.contains(key) && !js[key].is_null()) {
            into = js[key].get<std::string>();
        } else if (required) {
            throw locprod::ConfigError(std::string("schema key '") + key + "' is required");
        }
    };
    str("firm_id", s.firm_id, true);
    str("period", s.period, true);
    str("output", s.output, true);
    str("capital", s.capital, true);
    str("materials", s.materials, true);
    if (!js.contains("labor"))
        throw locprod::ConfigError("schema key 'labor' is required (use null for a labor-free panel)");
    if (js["labor"].is_null())
        s.labor.reset();
    else
        s.labor = js["labor"].get<std::string>();
    if (!js.contains("coordinates") || !js["coordinates"].is_array() || js["coordinates"].empty())
        throw locprod::ConfigError("schema key 'coordinates' must be a non-empty array");
    s.coordinates = js["coordinates"].get<std::vector<std::string>>();
    if (js.contains("controls")) s.controls = js["controls"].get<std::vector<std::string>>();
    auto opt = [&](const char* key, std::optional<std::string>& into) {
        if (js.contains(key) && !js[key].is_null()) into = js[key].get<std::string>();
    };
    opt("materials_cost", s.materials_cost);
    opt("revenue", s.revenue);
    opt("price_ratio", s.price_ratio);
    opt("v", s.v);
    if (js.contains("log_transform")) s.log_transform = js["log_transform"].get<bool>();
    if (js.contains("delimiter")) {
        const auto d = js["delimiter"].get<std::string>();
        if (d.size() != 1) throw locprod::ConfigError("schema delimiter must be one character");
        s.delimiter = d[0];
    }
    return s;
}

locprod::Functional parse_functional(const json& js) {
    locprod::Functional f;
    const std::string kind = js.value("kind", "coefficient");
    using Kind = locprod::Functional::Kind;
    if (kind == "coefficient")
        f.kind = Kind::Coefficient;
    else if (kind == "coefficient_mean")
        f.kind = Kind::CoefficientMean;
    else if (kind == "rts")
        f.kind = Kind::ReturnsToScale;
    else if (kind == "theta")
        f.kind = Kind::Theta;
    else if (kind == "decomp_tech")
        f.kind = Kind::DecompTech;
    else if (kind == "decomp_tfp")
        f.kind = Kind::DecompTfp;
    else if (kind == "decomp_prod")
        f.kind = Kind::DecompProd;
    else
        throw locprod::ConfigError("unknown functional kind: " + kind);
    if (js.contains("param")) f.param = js["param"].get<std::string>();
    if (js.contains("at")) f.at = js["at"].get<std::vector<double>>();
    if (js.contains("benchmark")) f.benchmark = js["benchmark"].get<std::vector<double>>();
    if (js.contains("over")) f.over = js["over"].get<std::vector<std::vector<double>>>();
    if (js.contains("name")) f.name = js["name"].get<std::string>();
    if (f.name.empty()) {
        f.name = kind;
        if (!f.param.empty()) f.name += "_" + f.param;
        for (double c : f.at) f.name += "_" + locprod::format_double(c);
    }
    return f;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw locprod::ConfigError("cannot open config file: " + path);
    json js;
    try {
        js = json::parse(in);
    } catch (const std::exception& e) {
        throw locprod::ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    // accept a previous run's manifest: the resolved config is under "config"
    if (js.contains("tool") && js.contains("config")) js = js["config"];

    RunConfig cfg;
    cfg.raw = js;
    if (js.contains("command")) cfg.command = js["command"].get<std::string>();
    if (js.contains("input")) cfg.input = js["input"].get<std::string>();
    if (js.contains("schema")) cfg.schema = parse_schema(js["schema"]);
    cfg.tech_name = js.value("tech", std::string("cobb-douglas"));
    if (cfg.tech_name == "cobb-douglas")
        cfg.tech.form = locprod::TechnologyForm::CobbDouglas;
    else if (cfg.tech_name == "translog")
        cfg.tech.form = locprod::TechnologyForm::Translog;
    else
        throw locprod::ConfigError("tech must be 'cobb-douglas' or 'translog'");
    if (js.contains("h1")) cfg.h1 = js["h1"];
    if (js.contains("h2")) cfg.h2 = js["h2"];
    if (js.contains("h1_grid")) cfg.h1_grid = js["h1_grid"].get<std::vector<int>>();
    if (js.contains("h2_grid")) cfg.h2_grid = js["h2_grid"].get<std::vector<int>>();
    cfg.B = js.value("B", cfg.B);
    cfg.alpha = js.value("alpha", cfg.alpha);
    cfg.seed = js.value("seed", cfg.seed);
    cfg.threads = js.value("threads", cfg.threads);
    cfg.bias_correct = js.value("bias_correct", cfg.bias_correct);
    cfg.sidedness = js.value("sidedness", cfg.sidedness);
    cfg.pooled = js.value("pooled", cfg.pooled);
    cfg.store_draws = js.value("store_draws", cfg.store_draws);
    cfg.output_dir = js.value("output_dir", cfg.output_dir);
    if (js.contains("functionals"))
        for (const auto& e : js["functionals"]) cfg.functionals.push_back(parse_functional(e));
    if (js.contains("extra_targets"))
        cfg.extra_targets = js["extra_targets"].get<std::vector<std::vector<double>>>();
    if (js.contains("sim")) {
        const auto& sim = js["sim"];
        cfg.sim_n = sim.value("n", cfg.sim_n);
        cfg.sim_T = sim.value("T", cfg.sim_T);
        cfg.sim_Q = sim.value("Q", cfg.sim_Q);
        cfg.sim_B = sim.value("B", cfg.sim_B);
        cfg.sim_estimator = sim.value("estimator", cfg.sim_estimator);
        cfg.sim_h = sim.value("h", cfg.sim_h);
        cfg.sim_invariant = sim.value("invariant", cfg.sim_invariant);
        cfg.sim_sigma_eta = sim.value("sigma_eta", cfg.sim_sigma_eta);
        cfg.sim_sigma_zeta = sim.value("sigma_zeta", cfg.sim_sigma_zeta);
    }
    return cfg;
}

void apply_env(RunConfig& cfg) {
    if (const char* s = std::getenv("LOCPROD_SEED")) {
        cfg.seed = std::strtoull(s, nullptr, 10);
        cfg.seed_from_env = true;
    }
    if (const char* s = std::getenv("LOCPROD_THREADS")) {
        cfg.threads = static_cast<int>(std::strtol(s, nullptr, 10));
        cfg.threads_from_env = true;
    }
}

json resolved_config(const RunConfig& cfg) {
    json js = cfg.raw;
    js["command"] = cfg.command;
    js["tech"] = cfg.tech_name;
    js["seed"] = cfg.seed;
    js["threads"] = cfg.threads;
    js["B"] = cfg.B;
    js["alpha"] = cfg.alpha;
    js["output_dir"] = cfg.output_dir;
    if (!cfg.input.empty()) js["input"] = cfg.input;
    return js;
}

struct Artifacts {
    fs::path dir;
    std::vector<std::string> names;

    std::ofstream open(const std::string& name) {
        fs::create_directories(dir);
        names.push_back(name);
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) throw locprod::ConfigError("cannot write artifact: " + (dir / name).string());
        return out;
    }
};

void write_manifest(Artifacts& art, const RunConfig& cfg, double wall_seconds,
                    json extra = json::object()) {
    json man;
    man["tool"] = "locprod";
    man["version"] = locprod::kVersion;
    man["command"] = cfg.command;
    man["config"] = resolved_config(cfg);
    man["environment"] = {{"seed_from_env", cfg.seed_from_env},
                          {"threads_from_env", cfg.threads_from_env}};
    man["quantile_convention"] = "type7_linear_interpolation";
    for (auto& [k, v] : extra.items()) man[k] = v;
    json outs = json::array();
    for (const auto& n : art.names) outs.push_back(n);
    outs.push_back("manifest.json");
    man["outputs"] = outs;
    // wall time is informational and excluded from the byte-identity contract
    man["run"] = {{"wall_seconds", wall_seconds}};
    auto out = art.open("manifest.json");
    out << man.dump(2) << "\n";
}

locprod::PanelDataset load_input(const RunConfig& cfg) {
    if (cfg.input.empty()) throw locprod::ConfigError("config key 'input' is required");
    return locprod::load_panel_file(cfg.input, cfg.schema);
}

int resolve_h(const json& h, const char* key) {
    if (h.is_number_integer()) {
        const int v = h.get<int>();
        if (v < 1) throw locprod::ConfigError(std::string(key) + " must be a positive integer or \"cv\"");
        return v;
    }
    throw locprod::ConfigError(std::string(key) + " must be a positive integer or \"cv\"");
}

bool wants_cv(const json& h) { return h.is_string() && h.get<std::string>() == "cv"; }

std::vector<locprod::Functional> default_functionals(const locprod::PanelDataset& panel,
                                                     const RunConfig& cfg) {
    std::vector<locprod::Functional> out;
    locprod::ParamLayout lay{cfg.tech.form, panel.has_labor, panel.control_dim};
    out.push_back(locprod::Functional::coefficient_mean("beta_m"));
    for (const auto& nm : lay.names()) out.push_back(locprod::Functional::coefficient_mean(nm));
    locprod::Functional th;
    th.kind = locprod::Functional::Kind::Theta;
    th.name = "theta";
    out.push_back(th);
    return out;
}

// shared estimate stage: optional CV, then the full two-step fit
struct FitBundle {
    int h1 = 0, h2 = 0;
    std::optional<locprod::CrossValidationResult> cv1, cv2;
    locprod::EstimationResult fit;
};

FitBundle run_fit(const locprod::PanelDataset& panel, const RunConfig& cfg) {
    FitBundle b;
    locprod::EstimationOptions opts;
    opts.extra_targets = cfg.extra_targets;
    if (wants_cv(cfg.h1)) {
        if (cfg.h1_grid.empty()) throw locprod::ConfigError("h1 = \"cv\" requires h1_grid");
        b.cv1 = locprod::cross_validate(panel, 1, cfg.h1_grid, cfg.tech);
        b.h1 = b.cv1->chosen_h;
    } else {
        b.h1 = resolve_h(cfg.h1, "h1");
    }
    if (wants_cv(cfg.h2)) {
        if (cfg.h2_grid.empty()) throw locprod::ConfigError("h2 = \"cv\" requires h2_grid");
        b.cv2 = locprod::cross_validate(panel, 2, cfg.h2_grid, cfg.tech, b.h1);
        b.h2 = b.cv2->chosen_h;
    } else {
        b.h2 = resolve_h(cfg.h2, "h2");
    }
    b.fit = locprod::full_fit(panel, b.h1, b.h2, cfg.tech, opts);
    return b;
}

int cmd_estimate(RunConfig& cfg, Artifacts& art, const std::chrono::steady_clock::time_point& t0) {
    const auto panel = load_input(cfg);
    const auto b = run_fit(panel, cfg);
    {
        auto out = art.open("surfaces.csv");
        locprod::write_surfaces_csv(panel, b.fit, out);
    }
    {
        auto out = art.open("observations.csv");
        locprod::write_observations_csv(panel, b.fit, out);
    }
    if (b.cv1) {
        auto out = art.open("cv_step1.csv");
        locprod::write_cv_csv(*b.cv1, out);
    }
    if (b.cv2) {
        auto out = art.open("cv_step2.csv");
        locprod::write_cv_csv(*b.cv2, out);
    }
    json extra;
    extra["panel"] = locprod::panel_metadata(panel);
    extra["h1"] = b.h1;
    extra["h2"] = b.h2;
    extra["theta"] = b.fit.first.theta;
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(art, cfg, wall, extra);
    return 0;
}

int cmd_cv(RunConfig& cfg, Artifacts& art, const std::chrono::steady_clock::time_point& t0) {
    const auto panel = load_input(cfg);
    if (cfg.h1_grid.empty() && cfg.h2_grid.empty())
        throw locprod::ConfigError("cv: provide h1_grid and/or h2_grid");
    json extra;
    extra["panel"] = locprod::panel_metadata(panel);
    int h1 = 0;
    if (!cfg.h1_grid.empty()) {
        const auto cv1 = locprod::cross_validate(panel, 1, cfg.h1_grid, cfg.tech);
        auto out = art.open("cv_step1.csv");
        locprod::write_cv_csv(cv1, out);
        extra["h1"] = cv1.chosen_h;
        h1 = cv1.chosen_h;
    }
    if (!cfg.h2_grid.empty()) {
        if (h1 == 0) h1 = resolve_h(cfg.h1, "h1");
        const auto cv2 = locprod::cross_validate(panel, 2, cfg.h2_grid, cfg.tech, h1);
        auto out = art.open("cv_step2.csv");
        locprod::write_cv_csv(cv2, out);
        extra["h2"] = cv2.chosen_h;
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(art, cfg, wall, extra);
    return 0;
}

int cmd_infer(RunConfig& cfg, Artifacts& art, const std::chrono::steady_clock::time_point& t0) {
    if (cfg.B < 1) throw locprod::ConfigError("infer: B must be >= 1");
    const auto panel = load_input(cfg);
    const auto b = run_fit(panel, cfg);
    auto funs = cfg.functionals.empty() ? default_functionals(panel, cfg) : cfg.functionals;
    locprod::BootstrapOptions bopt;
    bopt.estimation.extra_targets = cfg.extra_targets;
    bopt.store_surfaces = cfg.store_draws;
    const auto draws =
        locprod::wild_bootstrap(panel, b.fit, cfg.B, cfg.seed, b.h1, b.h2, funs, bopt);

    locprod::Sidedness side = locprod::Sidedness::TwoSided;
    if (cfg.sidedness == "lower") side = locprod::Sidedness::LowerBound;
    else if (cfg.sidedness == "upper") side = locprod::Sidedness::UpperBound;
    else if (cfg.sidedness != "two_sided")
        throw locprod::ConfigError("sidedness must be two_sided, lower or upper");
    std::vector<locprod::ConfidenceInterval> cis;
    for (Eigen::Index j = 0; j < draws.draws.cols(); ++j) {
        std::vector<double> dj(static_cast<std::size_t>(draws.draws.rows()));
        for (Eigen::Index r = 0; r < draws.draws.rows(); ++r)
            dj[static_cast<std::size_t>(r)] = draws.draws(r, j);
        cis.push_back(locprod::percentile_ci(dj, draws.point[static_cast<std::size_t>(j)],
                                             cfg.alpha, cfg.bias_correct, side));
    }
    {
        auto out = art.open("draws.csv");
        locprod::write_draws_csv(draws, out);
    }
    {
        auto out = art.open("summary.json");
        out << locprod::interval_summary(draws, cis).dump(2) << "\n";
    }
    json extra;
    extra["panel"] = locprod::panel_metadata(panel);
    extra["h1"] = b.h1;
    extra["h2"] = b.h2;
    extra["excluded_replicates"] = draws.excluded;
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(art, cfg, wall, extra);
    return 0;
}

int cmd_test_invariance(RunConfig& cfg, Artifacts& art,
                        const std::chrono::steady_clock::time_point& t0) {
    if (cfg.B < 1) throw locprod::ConfigError("test-invariance: B must be >= 1");
    const auto panel = load_input(cfg);
    const int h1 = resolve_h(cfg.h1, "h1");
    const int h2 = resolve_h(cfg.h2, "h2");
    const auto res = locprod::invariance_test(panel, h1, h2, cfg.B, cfg.seed, cfg.tech);
    {
        auto out = art.open("tboot.csv");
        locprod::CsvWriter w(out);
        w.row({"replicate", "t_stat"});
        for (std::size_t i = 0; i < res.t_boot.size(); ++i)
            w.row({std::to_string(i), locprod::format_double(res.t_boot[i])});
    }
    json extra;
    extra["panel"] = locprod::panel_metadata(panel);
    json tj;
    tj["t_stat"] = res.t_stat;
    tj["p_value"] = res.p_value;
    tj["B"] = res.B;
    tj["excluded"] = res.excluded;
    tj["rss_restricted"] = res.rss_restricted;
    tj["rss_unrestricted"] = res.rss_unrestricted;
    {
        auto out = art.open("invariance.json");
        out << tj.dump(2) << "\n";
    }
    extra["test"] = tj;
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(art, cfg, wall, extra);
    return 0;
}

int cmd_decompose(RunConfig& cfg, Artifacts& art, const std::chrono::steady_clock::time_point& t0) {
    const auto panel = load_input(cfg);
    const auto b = run_fit(panel, cfg);
    const auto tab = locprod::decomposition_table(panel, b.fit, cfg.pooled);
    {
        auto out = art.open("decomposition.csv");
        locprod::write_decomposition_csv(panel, tab, out);
    }
    {
        auto out = art.open("decomposition_summary.json");
        out << locprod::decomposition_summary(tab).dump(2) << "\n";
    }
    json extra;
    extra["panel"] = locprod::panel_metadata(panel);
    extra["h1"] = b.h1;
    extra["h2"] = b.h2;
    extra["benchmark"] = tab.benchmark;
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(art, cfg, wall, extra);
    return 0;
}

int cmd_simulate(RunConfig& cfg, Artifacts& art, const std::chrono::steady_clock::time_point& t0) {
    locprod::SimConfig sc;
    sc.n = cfg.sim_n;
    sc.T = cfg.sim_T;
    sc.seed = cfg.seed;
    sc.location_invariant = cfg.sim_invariant;
    sc.sigma_eta = cfg.sim_sigma_eta;
    sc.sigma_zeta = cfg.sim_sigma_zeta;
    const auto which = cfg.sim_estimator == "sample-splitting"
                           ? locprod::SimEstimator::SampleSplitting
                           : locprod::SimEstimator::Kernel;
    if (cfg.sim_estimator != "kernel" && cfg.sim_estimator != "sample-splitting")
        throw locprod::ConfigError("sim.estimator must be 'kernel' or 'sample-splitting'");
    auto rep = locprod::run_monte_carlo(sc, cfg.sim_Q, which, cfg.sim_h);
    {
        auto out = art.open("report.csv");
        locprod::write_mc_report_csv(rep, out);
    }
    json extra;
    extra["sim"] = {{"n", sc.n},       {"T", sc.T},
                    {"Q", cfg.sim_Q},  {"estimator", rep.estimator},
                    {"h", rep.h},      {"invariant", sc.location_invariant},
                    {"failures", rep.failures}};
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(art, cfg, wall, extra);
    return 0;
}

int cmd_coverage(RunConfig& cfg, Artifacts& art, const std::chrono::steady_clock::time_point& t0) {
    locprod::SimConfig sc;
    sc.n = cfg.sim_n;
    sc.T = cfg.sim_T;
    sc.seed = cfg.seed;
    sc.location_invariant = cfg.sim_invariant;
    sc.sigma_eta = cfg.sim_sigma_eta;
    sc.sigma_zeta = cfg.sim_sigma_zeta;
    auto rep = locprod::coverage_study(sc, cfg.sim_Q, cfg.sim_B, cfg.alpha);
    {
        auto out = art.open("coverage.csv");
        locprod::write_coverage_csv(rep, out);
    }
    {
        auto out = art.open("power_curve.csv");
        locprod::write_power_curve_csv(rep, out);
    }
    json extra;
    extra["sim"] = {{"n", sc.n},      {"T", sc.T},          {"Q", cfg.sim_Q},
                    {"B", cfg.sim_B}, {"alpha", cfg.alpha}, {"invariant", sc.location_invariant},
                    {"failed_sims", rep.failed_sims}};
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(art, cfg, wall, extra);
    return 0;
}

json error_payload(int code, const std::string& kind, const std::string& message) {
    json e;
    e["error"] = {{"code", code}, {"kind", kind}, {"message", message}};
    return e;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"locationally varying production function estimation"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::string> out_override, input_override;
    std::optional<std::uint64_t> seed_override;
    std::optional<int> threads_override, b_override;

    const char* names[] = {"estimate", "cv", "infer", "test-invariance", "decompose",
                           "simulate", "coverage"};
    for (const char* nm : names) {
        auto* sub = app.add_subcommand(nm);
        sub->add_option("--config", config_path, "JSON run configuration (or a prior manifest)")
            ->required();
        sub->add_option("--out", out_override, "output directory override");
        sub->add_option("--input", input_override, "input CSV override");
        sub->add_option("--seed", seed_override, "root seed override");
        sub->add_option("--threads", threads_override, "worker count override (0 = hardware)");
        sub->add_option("-B", b_override, "bootstrap replicate override");
    }

    CLI11_PARSE(app, argc, argv);
    const std::string command = app.get_subcommands().front()->get_name();

    RunConfig cfg;
    const auto t0 = std::chrono::steady_clock::now();
    auto fail = [&](int code, const std::string& kind, const std::string& msg) {
        const json payload = error_payload(code, kind, msg);
        std::cerr << payload.dump(2) << "\n";
        try {
            if (!cfg.output_dir.empty()) {
                fs::create_directories(cfg.output_dir);
                std::ofstream out(fs::path(cfg.output_dir) / "error.json", std::ios::binary);
                out << payload.dump(2) << "\n";
            }
        } catch (...) {
        }
        return code;
    };

    try {
        cfg = load_config(config_path);
        cfg.command = command;
        apply_env(cfg);
        if (out_override) cfg.output_dir = *out_override;
        if (input_override) cfg.input = *input_override;
        if (seed_override) {
            cfg.seed = *seed_override;
            cfg.seed_from_env = false;
        }
        if (threads_override) cfg.threads = *threads_override;
        if (b_override) {
            cfg.B = *b_override;
            cfg.sim_B = *b_override;
        }
#ifdef _OPENMP
        if (cfg.threads > 0) omp_set_num_threads(cfg.threads);
#endif
        Artifacts art;
        art.dir = cfg.output_dir;
        if (command == "estimate") return cmd_estimate(cfg, art, t0);
        if (command == "cv") return cmd_cv(cfg, art, t0);
        if (command == "infer") return cmd_infer(cfg, art, t0);
        if (command == "test-invariance") return cmd_test_invariance(cfg, art, t0);
        if (command == "decompose") return cmd_decompose(cfg, art, t0);
        if (command == "simulate") return cmd_simulate(cfg, art, t0);
        if (command == "coverage") return cmd_coverage(cfg, art, t0);
        return fail(2, "config", "unknown command: " + command);
    } catch (const locprod::ConfigError& e) {
        return fail(2, "config", e.what());
    } catch (const locprod::ParseError& e) {
        return fail(2, "data", e.what());
    } catch (const locprod::DataDomainError& e) {
        return fail(2, "data", e.what());
    } catch (const locprod::IntegrityError& e) {
        return fail(2, "data", e.what());
    } catch (const std::invalid_argument& e) {
        return fail(2, "config", e.what());
    } catch (const locprod::SingularMatrixError& e) {
        return fail(3, "numerical", e.what());
    } catch (const locprod::NumericError& e) {
        return fail(3, "numerical", e.what());
    } catch (const std::exception& e) {
        return fail(3, "internal", e.what());
    }
}
