// File formats and JSON configuration parsing.
//
// All doubles are written with the shortest representation that round-trips
// exactly. Config readers reject unknown keys.
#pragma once

#include "bench.hpp"
#include "bounds.hpp"
#include "canon.hpp"
#include "models/simulate.hpp"
#include "presets.hpp"
#include "stage1.hpp"
#include "stage2.hpp"

#include <json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace twostage::io {

using json = nlohmann::json;

/// Malformed or inconsistent configuration.
class ConfigError : public InvalidDataError {
  public:
    using InvalidDataError::InvalidDataError;
};

// -----------------------------------------------------------------------------
// Primitives
// -----------------------------------------------------------------------------

inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, const std::string &where) {
    while (!s.empty() && s.front() == ' ')
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\r'))
        s.remove_suffix(1);
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw InvalidDataError(where + ": cannot parse number '" + std::string(s) + "'");
    return v;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t p = line.find(',', start);
        out.push_back(line.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start));
        if (p == std::string_view::npos)
            break;
        start = p + 1;
    }
    return out;
}

inline json to_json(const Vector &v) {
    json a = json::array();
    for (Index i = 0; i < v.size(); ++i)
        a.push_back(v[i]);
    return a;
}

inline Vector vector_from(const json &j, const std::string &where) {
    if (!j.is_array())
        throw ConfigError(where + ": expected an array of numbers");
    Vector v(static_cast<Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number())
            throw ConfigError(where + ": element " + std::to_string(i) + " is not a number");
        v[static_cast<Index>(i)] = j[i].get<double>();
    }
    return v;
}

inline void check_keys(const json &j, std::initializer_list<std::string_view> allowed, const std::string &where) {
    if (!j.is_object())
        throw ConfigError(where + ": expected an object");
    for (const auto &item : j.items()) {
        bool ok = false;
        for (auto a : allowed)
            ok = ok || item.key() == a;
        if (!ok)
            throw ConfigError(where + ": unknown key '" + item.key() + "'");
    }
}

template <typename T>
T get_as(const json &j, const char *key, const std::string &where) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception &e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

inline void write_text(const std::filesystem::path &path, const std::string &text) {
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw InvalidDataError("cannot open '" + path.string() + "' for writing");
    f << text;
    if (!f)
        throw InvalidDataError("write to '" + path.string() + "' failed");
}

inline std::string read_text(const std::filesystem::path &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw InvalidDataError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline json read_json(const std::filesystem::path &path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error &e) {
        throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

inline std::string dump(const json &j) { return j.dump(2) + "\n"; }

// -----------------------------------------------------------------------------
// Parameter space and model options
// -----------------------------------------------------------------------------

inline json to_json(const ParamSpace &sp) {
    return json{{"names1", sp.names1}, {"names2", sp.names2}, {"lo1", to_json(sp.lo1)},
                {"hi1", to_json(sp.hi1)},  {"lo2", to_json(sp.lo2)},       {"hi2", to_json(sp.hi2)},
                {"ell1", sp.ell1},         {"ell2", sp.ell2},              {"center2", to_json(sp.center2)}};
}

/// Overlays the given keys on `base`.
inline ParamSpace space_from(const json &j, ParamSpace base, const std::string &where) {
    check_keys(j, {"names1", "names2", "lo1", "hi1", "lo2", "hi2", "ell1", "ell2", "center2"}, where);
    if (j.contains("names1"))
        base.names1 = get_as<std::vector<std::string>>(j, "names1", where);
    if (j.contains("names2"))
        base.names2 = get_as<std::vector<std::string>>(j, "names2", where);
    for (const char *k : {"lo1", "hi1", "lo2", "hi2", "center2"}) {
        if (!j.contains(k))
            continue;
        Vector v = vector_from(j.at(k), where + "." + k);
        if (std::string_view(k) == "lo1")
            base.lo1 = v;
        else if (std::string_view(k) == "hi1")
            base.hi1 = v;
        else if (std::string_view(k) == "lo2")
            base.lo2 = v;
        else if (std::string_view(k) == "hi2")
            base.hi2 = v;
        else
            base.center2 = v;
    }
    if (j.contains("ell1"))
        base.ell1 = get_as<double>(j, "ell1", where);
    if (j.contains("ell2"))
        base.ell2 = get_as<double>(j, "ell2", where);
    try {
        base.validate();
    } catch (const EstimationError &e) {
        throw ConfigError(where + ": " + e.what());
    }
    return base;
}

inline json to_json(const std::string &id, const models::ModelOptions &o) {
    json j;
    if (id == "pitot")
        j["pitot"] = {{"rho", o.pitot.rho},
                      {"K_alpha", o.pitot.K_alpha},
                      {"K_beta", o.pitot.K_beta},
                      {"r", to_json(Vector(o.pitot.r))}};
    if (id == "datacompat")
        j["datacompat"] = {{"dt", o.datacompat.dt}, {"g", o.datacompat.g}, {"x0", to_json(Vector(o.datacompat.x0))}};
    if (o.space)
        j["space"] = to_json(*o.space);
    return j.is_null() ? json::object() : j;
}

inline models::ModelOptions options_from(const json &j, const std::string &id, const std::string &where) {
    check_keys(j, {"pitot", "datacompat", "space"}, where);
    models::ModelOptions o;
    if (j.contains("pitot")) {
        const json &p = j.at("pitot");
        const std::string w = where + ".pitot";
        check_keys(p, {"rho", "K_alpha", "K_beta", "r"}, w);
        if (p.contains("rho"))
            o.pitot.rho = get_as<double>(p, "rho", w);
        if (p.contains("K_alpha"))
            o.pitot.K_alpha = get_as<double>(p, "K_alpha", w);
        if (p.contains("K_beta"))
            o.pitot.K_beta = get_as<double>(p, "K_beta", w);
        if (p.contains("r")) {
            const Vector r = vector_from(p.at("r"), w + ".r");
            if (r.size() != 3)
                throw ConfigError(w + ".r: expected 3 entries");
            o.pitot.r = r;
        }
    }
    if (j.contains("datacompat")) {
        const json &d = j.at("datacompat");
        const std::string w = where + ".datacompat";
        check_keys(d, {"dt", "g", "x0"}, w);
        if (d.contains("dt"))
            o.datacompat.dt = get_as<double>(d, "dt", w);
        if (d.contains("g"))
            o.datacompat.g = get_as<double>(d, "g", w);
        if (d.contains("x0")) {
            const Vector x0 = vector_from(d.at("x0"), w + ".x0");
            if (x0.size() != 6)
                throw ConfigError(w + ".x0: expected 6 entries");
            o.datacompat.x0 = x0;
        }
    }
    if (j.contains("space"))
        o.space = space_from(j.at("space"), models::default_space(id), where + ".space");
    return o;
}

// -----------------------------------------------------------------------------
// Dataset CSV and descriptor
// -----------------------------------------------------------------------------

inline std::string dataset_csv(const Dataset &d) {
    std::ostringstream os;
    const Index p = d.contexts.empty() ? 0 : d.contexts[0].x.size();
    const Index q = d.contexts.empty() ? 0 : d.contexts[0].u.size();
    const Index m = d.z.empty() ? 0 : d.z[0].size();
    os << "k";
    for (Index i = 1; i <= p; ++i)
        os << ",x_" << i;
    for (Index i = 1; i <= q; ++i)
        os << ",u_" << i;
    for (Index i = 1; i <= m; ++i)
        os << ",z_" << i;
    os << "\n";
    for (std::size_t k = 0; k < d.size(); ++k) {
        os << k;
        for (const Vector *v : {&d.contexts[k].x, &d.contexts[k].u, &d.z[k]})
            for (Index i = 0; i < v->size(); ++i)
                os << "," << format_double((*v)[i]);
        os << "\n";
    }
    return os.str();
}

inline Dataset parse_dataset_csv(const std::string &text, const std::string &where = "dataset") {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line))
        throw InvalidDataError(where + ": empty file");
    const auto header = split_csv(line);
    Index p = 0, q = 0, m = 0;
    if (header.empty() || header[0] != "k")
        throw InvalidDataError(where + ": header must start with 'k'");
    for (std::size_t i = 1; i < header.size(); ++i) {
        std::string h(header[i]);
        while (!h.empty() && (h.back() == '\r' || h.back() == ' '))
            h.pop_back();
        const char c = h.empty() ? '?' : h[0];
        if (h.size() < 3 || h[1] != '_')
            throw InvalidDataError(where + ": bad header column '" + h + "'");
        if (c == 'x' && q == 0 && m == 0)
            ++p;
        else if (c == 'u' && m == 0)
            ++q;
        else if (c == 'z')
            ++m;
        else
            throw InvalidDataError(where + ": header columns must be ordered k, x_*, u_*, z_*");
    }
    if (m == 0)
        throw InvalidDataError(where + ": no measurement columns");
    Dataset d;
    std::size_t row = 0;
    while (std::getline(is, line)) {
        if (line.empty() || line == "\r")
            continue;
        const auto f = split_csv(line);
        const std::string w = where + " row " + std::to_string(row + 1);
        if (static_cast<Index>(f.size()) != 1 + p + q + m)
            throw InvalidDataError(w + ": expected " + std::to_string(1 + p + q + m) + " fields");
        SampleContext c{Vector(p), Vector(q)};
        Vector z(m);
        for (Index i = 0; i < p; ++i)
            c.x[i] = parse_double(f[static_cast<std::size_t>(1 + i)], w);
        for (Index i = 0; i < q; ++i)
            c.u[i] = parse_double(f[static_cast<std::size_t>(1 + p + i)], w);
        for (Index i = 0; i < m; ++i)
            z[i] = parse_double(f[static_cast<std::size_t>(1 + p + q + i)], w);
        d.contexts.push_back(std::move(c));
        d.z.push_back(std::move(z));
        ++row;
    }
    return d;
}

inline json descriptor_json(const CanonicalModel &model, const models::ModelOptions &opt) {
    const ParamSpace &sp = model.space();
    json j;
    j["model_id"] = model.id();
    j["n1"] = sp.n1();
    j["n2"] = sp.n2();
    j["m"] = model.output_dim();
    j["p"] = model.state_dim();
    j["q"] = model.input_dim();
    j["space"] = to_json(sp);
    models::ModelOptions o = opt;
    o.space.reset();
    j["options"] = to_json(model.id(), o);
    return j;
}

struct LoadedDataset {
    Dataset data;
    std::string model_id;
    models::ModelOptions options;
};

inline LoadedDataset load_dataset(const std::filesystem::path &csv, const std::filesystem::path &descriptor) {
    const json d = read_json(descriptor);
    const std::string w = descriptor.string();
    check_keys(d, {"model_id", "n1", "n2", "m", "p", "q", "space", "options"}, w);
    LoadedDataset out;
    out.model_id = get_as<std::string>(d, "model_id", w);
    models::default_space(out.model_id); // rejects unknown ids
    out.options = d.contains("options") ? options_from(d.at("options"), out.model_id, w + ".options")
                                        : models::ModelOptions{};
    if (d.contains("space"))
        out.options.space = space_from(d.at("space"), models::default_space(out.model_id), w + ".space");
    out.data = parse_dataset_csv(read_text(csv), csv.string());
    const Index m = get_as<Index>(d, "m", w);
    if (!out.data.z.empty() && out.data.z[0].size() != m)
        throw InvalidDataError(csv.string() + ": measurement width does not match the descriptor");
    return out;
}

// -----------------------------------------------------------------------------
// Simulation spec and truth
// -----------------------------------------------------------------------------

inline models::ScheduleSegment segment_from(const json &j, const std::string &where) {
    check_keys(j, {"type", "duration", "amplitude", "airspeed", "axis"}, where);
    models::ScheduleSegment s;
    s.type = get_as<std::string>(j, "type", where);
    s.duration = get_as<double>(j, "duration", where);
    if (j.contains("amplitude"))
        s.amplitude = get_as<double>(j, "amplitude", where);
    if (j.contains("airspeed"))
        s.airspeed = get_as<double>(j, "airspeed", where);
    if (j.contains("axis"))
        s.axis = get_as<std::string>(j, "axis", where);
    return s;
}

/// `j` holds the simulate block; model id and options come from the top level.
inline models::SimSpec simspec_from(const json &j, const std::string &model, const models::ModelOptions &opt,
                                    const std::string &where) {
    check_keys(j, {"xi1", "xi2", "noise_std", "N", "seed", "schedule"}, where);
    models::SimSpec s;
    s.model = model;
    s.options = opt;
    if (j.contains("xi1"))
        s.xi1 = vector_from(j.at("xi1"), where + ".xi1");
    if (j.contains("xi2"))
        s.xi2 = vector_from(j.at("xi2"), where + ".xi2");
    if (j.contains("noise_std")) {
        const json &n = j.at("noise_std");
        s.noise_std = n.is_number() ? Vector::Constant(1, n.get<double>()) : vector_from(n, where + ".noise_std");
    }
    if (j.contains("N"))
        s.N = get_as<Index>(j, "N", where);
    if (j.contains("seed"))
        s.seed = get_as<std::uint64_t>(j, "seed", where);
    if (j.contains("schedule")) {
        const json &a = j.at("schedule");
        if (!a.is_array())
            throw ConfigError(where + ".schedule: expected an array");
        for (std::size_t i = 0; i < a.size(); ++i)
            s.schedule.push_back(segment_from(a[i], where + ".schedule[" + std::to_string(i) + "]"));
    }
    return s;
}

inline json truth_json(const models::TruthRecord &t) {
    return json{{"model_id", t.model},
                {"xi1", to_json(t.xi1)},
                {"xi2", to_json(t.xi2)},
                {"noise_std", to_json(t.noise_std)},
                {"seed", t.seed}};
}

// -----------------------------------------------------------------------------
// Solver configs
// -----------------------------------------------------------------------------

inline SamplerConfig sampler_from(const json &j, SamplerConfig c, const std::string &where) {
    check_keys(j, {"mode", "count", "grid_steps", "grid_lo", "grid_hi", "mean", "stddev", "seed", "T1", "T2", "rho",
                   "tau", "second_order", "threads"},
               where);
    if (j.contains("mode")) {
        const auto m = get_as<std::string>(j, "mode", where);
        if (m == "grid")
            c.mode = SamplerMode::Grid;
        else if (m == "uniform" || m == "uniform-box")
            c.mode = SamplerMode::UniformBox;
        else if (m == "gaussian")
            c.mode = SamplerMode::Gaussian;
        else
            throw ConfigError(where + ".mode: expected grid, uniform-box or gaussian");
    }
    if (j.contains("count"))
        c.count = get_as<std::size_t>(j, "count", where);
    if (j.contains("grid_steps"))
        c.grid_steps = get_as<std::vector<int>>(j, "grid_steps", where);
    if (j.contains("grid_lo"))
        c.grid_lo = vector_from(j.at("grid_lo"), where + ".grid_lo");
    if (j.contains("grid_hi"))
        c.grid_hi = vector_from(j.at("grid_hi"), where + ".grid_hi");
    if (j.contains("mean"))
        c.mean = vector_from(j.at("mean"), where + ".mean");
    if (j.contains("stddev"))
        c.stddev = vector_from(j.at("stddev"), where + ".stddev");
    if (j.contains("seed"))
        c.seed = get_as<std::uint64_t>(j, "seed", where);
    if (j.contains("T1"))
        c.T1 = get_as<double>(j, "T1", where);
    if (j.contains("T2"))
        c.T2 = get_as<double>(j, "T2", where);
    if (j.contains("rho"))
        c.rho = get_as<double>(j, "rho", where);
    if (j.contains("tau"))
        c.tau = get_as<double>(j, "tau", where);
    if (j.contains("second_order")) {
        const auto p = get_as<std::string>(j, "second_order", where);
        if (p == "enforce")
            c.second_order = SecondOrderPolicy::Enforce;
        else if (p == "report")
            c.second_order = SecondOrderPolicy::Report;
        else if (p == "skip")
            c.second_order = SecondOrderPolicy::Skip;
        else
            throw ConfigError(where + ".second_order: expected enforce, report or skip");
    }
    if (j.contains("threads"))
        c.threads = get_as<unsigned>(j, "threads", where);
    return c;
}

inline SolverConfig solver_from(const json &j, SolverConfig c, const std::string &where) {
    check_keys(j, {"mode", "max_outer_alternations", "r_tol", "grad_tol", "step_tol", "max_iters", "seed"}, where);
    if (j.contains("mode")) {
        const auto m = get_as<std::string>(j, "mode", where);
        if (m == "auto")
            c.mode = SolveMode::Auto;
        else if (m == "xi2-only")
            c.mode = SolveMode::Xi2Only;
        else if (m == "joint")
            c.mode = SolveMode::Joint;
        else
            throw ConfigError(where + ".mode: expected auto, xi2-only or joint");
    }
    if (j.contains("max_outer_alternations"))
        c.max_outer_alternations = get_as<int>(j, "max_outer_alternations", where);
    if (j.contains("r_tol"))
        c.r_tol = get_as<double>(j, "r_tol", where);
    if (j.contains("grad_tol"))
        c.grad_tol = get_as<double>(j, "grad_tol", where);
    if (j.contains("step_tol"))
        c.step_tol = get_as<double>(j, "step_tol", where);
    if (j.contains("max_iters"))
        c.max_iters = get_as<int>(j, "max_iters", where);
    if (j.contains("seed"))
        c.seed = get_as<std::uint64_t>(j, "seed", where);
    return c;
}

// -----------------------------------------------------------------------------
// Results
// -----------------------------------------------------------------------------

inline std::string stage1_map_csv(const Stage1Report &rep) {
    std::ostringstream os;
    const Index n2 = rep.records.empty() ? 0 : rep.records[0].xi2p.size();
    for (Index i = 1; i <= n2; ++i)
        os << "xi2p_" << i << ",";
    os << "norm_xi2p,traceR,screened_ok\n";
    for (const auto &r : rep.records) {
        for (Index i = 0; i < n2; ++i)
            os << format_double(r.xi2p[i]) << ",";
        os << format_double(r.xi2p.norm()) << "," << format_double(r.traceR) << "," << (r.screened_ok ? 1 : 0)
           << "\n";
    }
    return os.str();
}

inline json stage1_summary_json(const Stage1Report &rep) {
    const auto &c = rep.chosen_record();
    std::size_t screened = 0;
    for (const auto &r : rep.records)
        screened += r.screened_ok;
    return json{{"verdict", to_string(rep.verdict)},
                {"chosen_index", rep.chosen},
                {"xi2p", to_json(c.xi2p)},
                {"xi1p", to_json(c.xi1p)},
                {"traceR", c.traceR},
                {"Rdiag", to_json(c.Rdiag.r)},
                {"min_trace", rep.min_trace},
                {"cluster_diameter", rep.cluster_diameter},
                {"ell2", rep.ell2},
                {"candidates", rep.records.size()},
                {"screened_ok", screened}};
}

inline json to_json(const BoundsReport &b) {
    return json{{"ell1", b.ell1},
                {"ell2", b.ell2},
                {"L_A", b.L_A},
                {"L_b", b.L_b},
                {"E1", b.E1},
                {"E2", b.E2},
                {"E", b.E},
                {"J_stage1", b.J_stage1},
                {"J_final", b.J_final},
                {"upper_holds", b.upper_holds},
                {"lower_holds", b.lower_holds},
                {"bracket_holds", b.bracket_holds},
                {"lipschitz_samples", b.lipschitz_samples}};
}

inline json result_json(const EstimateResult &r, const BoundsReport *bounds = nullptr) {
    json j{{"model_id", r.model_id},
           {"mode_used", to_string(r.mode_used)},
           {"xi1", to_json(r.xi1)},
           {"xi2", to_json(r.xi2)},
           {"stddev", to_json(r.stddev)},
           {"Rdiag", to_json(r.Rdiag.r)},
           {"final_cost", r.final_cost},
           {"alternations", r.alternations},
           {"converged", r.converged},
           {"seed", r.seed ? json(*r.seed) : json(nullptr)},
           {"r_converged", r.r_converged},
           {"last_rel_dr", r.last_rel_dr},
           {"inner_stop", r.inner_stop},
           {"xi1_in_box", r.xi1_in_box},
           {"hessian_clipped", r.hessian_clipped}};
    if (!r.note.empty())
        j["note"] = r.note;
    if (bounds)
        j["bounds"] = to_json(*bounds);
    return j;
}

inline std::string mc_runs_csv(const McReport &rep) {
    std::ostringstream os;
    os << "run,estimator,converged,err_norm,correct,wall_ms\n";
    for (const auto &r : rep.runs) {
        if (!r.applicable)
            continue;
        os << r.run << "," << r.estimator << "," << (r.converged ? 1 : 0) << "," << format_double(r.err_norm) << ","
           << (r.correct ? 1 : 0) << "," << format_double(r.wall_ms) << "\n";
    }
    return os.str();
}

inline json mc_summary_json(const McReport &rep, double tau_c) {
    json table = json::array();
    for (const auto &s : rep.summary) {
        json row{{"estimator", s.estimator}};
        if (s.applicable) {
            row["correct_percent"] = s.percent_correct;
            row["correct"] = s.correct;
            row["converged"] = s.converged;
        } else {
            row["correct_percent"] = "n/a";
        }
        table.push_back(row);
    }
    return json{{"model_id", rep.model},   {"n_runs", rep.n_runs}, {"master_seed", rep.master_seed},
                {"fresh_data", rep.fresh_data}, {"tau_c", tau_c},     {"table", table}};
}

inline McConfig mc_from(const json &j, McConfig c, const std::string &where) {
    check_keys(j, {"n_runs", "init_mean", "init_std", "tau_c", "master_seed", "fresh_data", "estimators",
                   "record_timing", "threads"},
               where);
    if (j.contains("n_runs"))
        c.n_runs = get_as<std::size_t>(j, "n_runs", where);
    if (j.contains("init_mean"))
        c.init_mean = vector_from(j.at("init_mean"), where + ".init_mean");
    if (j.contains("init_std"))
        c.init_std = vector_from(j.at("init_std"), where + ".init_std");
    if (j.contains("tau_c"))
        c.tau_c = get_as<double>(j, "tau_c", where);
    if (j.contains("master_seed"))
        c.master_seed = get_as<std::uint64_t>(j, "master_seed", where);
    if (j.contains("fresh_data"))
        c.fresh_data = get_as<bool>(j, "fresh_data", where);
    if (j.contains("estimators"))
        c.estimators = get_as<std::vector<std::string>>(j, "estimators", where);
    if (j.contains("record_timing"))
        c.record_timing = get_as<bool>(j, "record_timing", where);
    if (j.contains("threads"))
        c.threads = get_as<unsigned>(j, "threads", where);
    return c;
}

} // namespace twostage::io
