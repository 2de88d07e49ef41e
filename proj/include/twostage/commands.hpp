// Config-driven command implementations shared by the CLI and the tests.
//
// Exit codes: 0 success, 2 config or data error, 3 non-converged estimate.
// Data files are deterministic; wall-clock information goes to run.log only.
#pragma once

#include "bench.hpp"
#include "bounds.hpp"
#include "io.hpp"
#include "models/simulate.hpp"
#include "parallel.hpp"
#include "presets.hpp"
#include "stage1.hpp"
#include "stage2.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

namespace twostage::cli {

namespace fs = std::filesystem;
using io::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNotConverged = 3;

struct RunOptions {
    json config = json::object();
    fs::path base_dir = ".";            ///< relative dataset paths resolve against this
    fs::path out = "out";
    std::optional<std::uint64_t> seed;  ///< overrides the command's primary seed
    std::optional<unsigned> threads;
    std::ostream *console = &std::cout;
};

inline RunOptions options_from_file(const fs::path &config_path) {
    RunOptions o;
    o.config = io::read_json(config_path);
    o.base_dir = config_path.has_parent_path() ? config_path.parent_path() : fs::path(".");
    if (o.config.is_object() && o.config.contains("out"))
        o.out = o.config.at("out").get<std::string>();
    return o;
}

inline unsigned thread_count(const RunOptions &o) { return o.threads ? std::max(1u, *o.threads) : default_threads(); }

// -----------------------------------------------------------------------------
// Input resolution
// -----------------------------------------------------------------------------

struct Input {
    std::string model_id;
    Dataset data;
    std::shared_ptr<const CanonicalModel> model;
    models::ModelOptions options;
    std::optional<models::TruthRecord> truth;
};

inline std::string model_id_from(const json &c) {
    if (!c.contains("model"))
        throw io::ConfigError("config: 'model' is required");
    const auto id = io::get_as<std::string>(c, "model", "config");
    try {
        models::default_space(id);
    } catch (const EstimationError &) {
        throw io::ConfigError("config: unknown model '" + id + "'");
    }
    return id;
}

inline models::SimSpec simspec_of(const RunOptions &o, const std::string &id) {
    const json &c = o.config;
    const models::ModelOptions opt =
        c.contains("options") ? io::options_from(c.at("options"), id, "options") : models::ModelOptions{};
    const json sim = c.contains("simulate") ? c.at("simulate") : json::object();
    return io::simspec_from(sim, id, opt, "simulate");
}

inline Input load_input(const RunOptions &o) {
    const json &c = o.config;
    Input in;
    if (c.contains("dataset")) {
        if (c.contains("simulate") || c.contains("options"))
            throw io::ConfigError("config: 'dataset' cannot be combined with 'simulate' or 'options'");
        const json &d = c.at("dataset");
        io::check_keys(d, {"csv", "descriptor"}, "dataset");
        const fs::path csv = o.base_dir / io::get_as<std::string>(d, "csv", "dataset");
        const fs::path desc = o.base_dir / io::get_as<std::string>(d, "descriptor", "dataset");
        io::LoadedDataset ld = io::load_dataset(csv, desc);
        if (c.contains("model") && io::get_as<std::string>(c, "model", "config") != ld.model_id)
            throw io::ConfigError("config: 'model' disagrees with the dataset descriptor");
        in.model_id = ld.model_id;
        in.data = std::move(ld.data);
        in.options = ld.options;
        in.model = models::make_model(in.model_id, in.options, &in.data.contexts);
        return in;
    }
    if (!c.contains("simulate"))
        throw io::ConfigError("config: provide either 'dataset' or 'simulate'");
    in.model_id = model_id_from(c);
    models::Simulation sim = models::simulate(simspec_of(o, in.model_id));
    in.data = std::move(sim.data);
    in.model = sim.model;
    in.options = sim.options;
    in.truth = std::move(sim.truth);
    return in;
}

inline SamplerConfig sampler_of(const RunOptions &o, const std::string &id) {
    SamplerConfig c = preset_sampler(id);
    c.threads = thread_count(o);
    if (o.config.contains("stage1"))
        c = io::sampler_from(o.config.at("stage1"), c, "stage1");
    if (o.threads)
        c.threads = thread_count(o);
    if (o.seed)
        c.seed = *o.seed;
    return c;
}

inline SolverConfig solver_of(const RunOptions &o, const std::string &id) {
    SolverConfig c = preset_solver(id);
    if (o.config.contains("stage2"))
        c = io::solver_from(o.config.at("stage2"), c, "stage2");
    return c;
}

struct BoundsOptions {
    bool enabled = true;
    std::size_t lipschitz_samples = 50;
    std::uint64_t seed = 1;
};

inline BoundsOptions bounds_of(const RunOptions &o) {
    BoundsOptions b;
    if (!o.config.contains("bounds"))
        return b;
    const json &j = o.config.at("bounds");
    io::check_keys(j, {"enabled", "lipschitz_samples", "seed"}, "bounds");
    if (j.contains("enabled"))
        b.enabled = io::get_as<bool>(j, "enabled", "bounds");
    if (j.contains("lipschitz_samples"))
        b.lipschitz_samples = io::get_as<std::size_t>(j, "lipschitz_samples", "bounds");
    if (j.contains("seed"))
        b.seed = io::get_as<std::uint64_t>(j, "seed", "bounds");
    return b;
}

inline void check_top_level(const RunOptions &o, std::initializer_list<std::string_view> allowed) {
    io::check_keys(o.config, allowed, "config");
}

/// Appends one line to run.log: the only place wall-clock data is written.
inline void log_run(const RunOptions &o, const std::string &command, double elapsed_ms) {
    fs::create_directories(o.out);
    std::ofstream f(o.out / "run.log", std::ios::app);
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%S", std::gmtime(&now));
    f << stamp << "Z " << command << " elapsed_ms=" << elapsed_ms << "\n";
}

// -----------------------------------------------------------------------------
// Commands
// -----------------------------------------------------------------------------

inline int cmd_simulate(const RunOptions &o) {
    check_top_level(o, {"model", "simulate", "options", "out"});
    const std::string id = model_id_from(o.config);
    models::SimSpec spec = simspec_of(o, id);
    if (o.seed)
        spec.seed = *o.seed;
    const models::Simulation sim = models::simulate(spec);
    io::write_text(o.out / "dataset.csv", io::dataset_csv(sim.data));
    io::write_text(o.out / "descriptor.json", io::dump(io::descriptor_json(*sim.model, sim.options)));
    io::write_text(o.out / "truth.json", io::dump(io::truth_json(sim.truth)));
    *o.console << "simulate: model=" << id << " N=" << sim.data.size() << " seed=" << spec.seed << "\n";
    return kExitOk;
}

inline int cmd_stage1_map(const RunOptions &o) {
    check_top_level(o, {"model", "simulate", "dataset", "options", "stage1", "out"});
    const Input in = load_input(o);
    const SamplerConfig cfg = sampler_of(o, in.model_id);
    const Stage1Report rep = run_stage1(*in.model, in.data, cfg);
    io::write_text(o.out / "stage1_map.csv", io::stage1_map_csv(rep));
    json summary = io::stage1_summary_json(rep);
    summary["model_id"] = in.model_id;
    summary["seed"] = cfg.seed;
    io::write_text(o.out / "stage1_summary.json", io::dump(summary));
    const auto &c = rep.chosen_record();
    *o.console << "stage1: verdict=" << to_string(rep.verdict) << " chosen=[";
    for (Index i = 0; i < c.xi2p.size(); ++i)
        *o.console << (i ? ", " : "") << io::format_double(c.xi2p[i]);
    *o.console << "] traceR=" << io::format_double(c.traceR) << "\n";
    return kExitOk;
}

struct EstimateOutput {
    Stage1Report stage1;
    EstimateResult result;
    std::optional<BoundsReport> bounds;
};

inline EstimateOutput run_estimate(const RunOptions &o, const Input &in) {
    const SamplerConfig s1cfg = sampler_of(o, in.model_id);
    SolverConfig s2cfg = solver_of(o, in.model_id);
    if (!s2cfg.seed)
        s2cfg.seed = s1cfg.seed;
    auto [s1, est] = run_two_stage(*in.model, in.data, s1cfg, s2cfg);
    if (!est.seed)
        est.seed = s1cfg.seed;
    EstimateOutput out{std::move(s1), std::move(est), std::nullopt};
    const BoundsOptions b = bounds_of(o);
    if (b.enabled)
        out.bounds = compute_bounds(*in.model, in.data, out.stage1, out.result, b.lipschitz_samples, b.seed);
    return out;
}

inline int cmd_estimate(const RunOptions &o) {
    check_top_level(o, {"model", "simulate", "dataset", "options", "stage1", "stage2", "bounds", "out"});
    const Input in = load_input(o);
    const EstimateOutput e = run_estimate(o, in);
    io::write_text(o.out / "result.json", io::dump(io::result_json(e.result, e.bounds ? &*e.bounds : nullptr)));
    *o.console << "estimate: model=" << in.model_id << " mode=" << to_string(e.result.mode_used)
               << " converged=" << (e.result.converged ? "true" : "false")
               << " alternations=" << e.result.alternations << "\n";
    return e.result.converged ? kExitOk : kExitNotConverged;
}

inline int cmd_bounds(const RunOptions &o) {
    check_top_level(o, {"model", "simulate", "dataset", "options", "stage1", "stage2", "bounds", "out"});
    const Input in = load_input(o);
    RunOptions forced = o;
    forced.config["bounds"]["enabled"] = true;
    const EstimateOutput e = run_estimate(forced, in);
    io::write_text(o.out / "bounds.json", io::dump(io::to_json(*e.bounds)));
    *o.console << "bounds: E=" << io::format_double(e.bounds->E)
               << " bracket=" << (e.bounds->bracket_holds ? "holds" : "violated") << "\n";
    return kExitOk;
}

inline McConfig mc_config_of(const RunOptions &o, bool bench_defaults) {
    const std::string id = model_id_from(o.config);
    McConfig c = preset_mc(id);
    if (!bench_defaults) {
        c.init_mean.resize(0);
        c.init_std.resize(0);
    }
    c.sim = simspec_of(o, id);
    c.stage1 = sampler_of(o, id);
    c.stage2 = solver_of(o, id);
    c.threads = thread_count(o);
    if (o.config.contains("mc"))
        c = io::mc_from(o.config.at("mc"), c, "mc");
    if (o.threads)
        c.threads = thread_count(o);
    if (o.seed)
        c.master_seed = *o.seed;
    if (c.init_mean.size() == 0 || c.init_std.size() == 0)
        throw io::ConfigError("mc: init_mean and init_std are required (bench supplies model defaults)");
    return c;
}

inline int run_mc_command(const RunOptions &o, bool bench_defaults) {
    check_top_level(o, {"model", "simulate", "options", "stage1", "stage2", "mc", "out"});
    const McConfig cfg = mc_config_of(o, bench_defaults);
    const McReport rep = run_mc(cfg);
    io::write_text(o.out / "mc_runs.csv", io::mc_runs_csv(rep));
    io::write_text(o.out / "mc_summary.json", io::dump(io::mc_summary_json(rep, cfg.tau_c)));
    *o.console << "mc: model=" << rep.model << " runs=" << rep.n_runs;
    for (const auto &s : rep.summary) {
        *o.console << " " << s.estimator << "=";
        if (s.applicable)
            *o.console << s.percent_correct << "%";
        else
            *o.console << "n/a";
    }
    *o.console << "\n";
    return kExitOk;
}

inline int cmd_mc(const RunOptions &o) { return run_mc_command(o, false); }
inline int cmd_bench(const RunOptions &o) { return run_mc_command(o, true); }

inline const std::vector<std::string> &command_names() {
    static const std::vector<std::string> names = {"simulate", "stage1-map", "estimate", "mc", "bench", "bounds"};
    return names;
}

/// Runs a command and maps failures to exit codes.
inline int dispatch(const std::string &command, const RunOptions &o, std::ostream &err = std::cerr) {
    const auto t0 = std::chrono::steady_clock::now();
    int code = kExitConfig;
    try {
        if (command == "simulate")
            code = cmd_simulate(o);
        else if (command == "stage1-map")
            code = cmd_stage1_map(o);
        else if (command == "estimate")
            code = cmd_estimate(o);
        else if (command == "mc")
            code = cmd_mc(o);
        else if (command == "bench")
            code = cmd_bench(o);
        else if (command == "bounds")
            code = cmd_bounds(o);
        else {
            err << "error: unknown command '" << command << "'\n";
            return kExitConfig;
        }
    } catch (const EstimationError &e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const json::exception &e) {
        err << "error: config: " << e.what() << "\n";
        return kExitConfig;
    } catch (const fs::filesystem_error &e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    log_run(o, command, ms);
    return code;
}

} // namespace twostage::cli
