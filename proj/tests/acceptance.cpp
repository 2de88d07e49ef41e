// Acceptance criteria. Prints one PASS/FAIL line per criterion; the exit
// status is non-zero when any criterion fails. Tolerances are pinned here.
#include "twostage/twostage.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

using namespace twostage;
namespace fs = std::filesystem;

namespace {

constexpr double kCorrectTol = 0.1;          // ||xi_true - xi_hat||_2 threshold
constexpr double kMapArgminTol = 0.03;       // criterion 3
constexpr double kSigmaBand = 3.0;           // criterion 4
constexpr double kZeroNoiseTol = 1e-6;       // criterion 7
constexpr double kWindTol = 0.5;             // criterion 8, m/s
constexpr double kLambdaVaTol = 0.05;        // criterion 8
constexpr double kRelDrTol = 0.05;           // criterion 9
constexpr int kMaxAlternations = 20;         // criterion 9
constexpr double kRuntimeBudgetS = 300.0;    // criteria 1 and 2

struct AltRecord {
    std::string source;
    int alternations;
    double last_rel_dr;
};
std::vector<AltRecord> g_alt; // converged runs feeding criterion 9

void note_alt(const std::string &src, bool converged, int alternations, double rel_dr) {
    if (converged)
        g_alt.push_back({src, alternations, rel_dr});
}

int g_failures = 0;

void report(int id, bool pass, const std::string &detail) {
    std::printf("[%s] criterion %d: %s\n", pass ? "PASS" : "FAIL", id, detail.c_str());
    std::fflush(stdout);
    g_failures += !pass;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char *f, double a) {
    char b[128];
    std::snprintf(b, sizeof b, f, a);
    return b;
}

cli::RunOptions load_config(const std::string &name) {
    return cli::options_from_file(fs::path(TWOSTAGE_SOURCE_DIR) / "configs" / name);
}

const McEstimatorSummary *find(const McReport &r, const std::string &e) {
    for (const auto &s : r.summary)
        if (s.estimator == e)
            return &s;
    return nullptr;
}

void collect_mc_alt(const McReport &rep, const std::string &tag) {
    for (const auto &r : rep.runs)
        if (r.estimator != "hk")
            note_alt(tag + "/" + r.estimator, r.converged, r.alternations, r.last_rel_dr);
}

// 1 and 2 ---------------------------------------------------------------------

void criterion_mc(int id, const std::string &config, bool expect_hk) {
    const auto t0 = std::chrono::steady_clock::now();
    cli::RunOptions o = load_config(config);
    o.threads = 1;
    const McConfig cfg = cli::mc_config_of(o, true);
    const McReport rep = run_mc(cfg);
    const double secs = seconds_since(t0);
    collect_mc_alt(rep, config);
    const auto *p = find(rep, "proposed");
    const auto *n = find(rep, "nlp");
    const auto *h = find(rep, "hk");
    bool ok = cfg.n_runs >= 500 && cfg.tau_c == kCorrectTol && p && n && h && secs < kRuntimeBudgetS;
    std::ostringstream d;
    d << rep.model << " runs=" << rep.n_runs << " proposed=" << (p ? p->percent_correct : -1)
      << "% nlp=" << (n ? n->percent_correct : -1) << "% hk=";
    if (h && h->applicable)
        d << h->percent_correct << "%";
    else
        d << "n/a";
    d << " runtime=" << fmt("%.1f", secs) << "s";
    if (ok) {
        ok = p->percent_correct >= 99.0;
        if (expect_hk) {
            ok = ok && n->percent_correct >= 99.0 && h->applicable && h->percent_correct >= 90.0 &&
                 h->percent_correct <= 100.0;
            d << " (need proposed>=99, nlp>=99, hk in [90,100])";
        } else {
            ok = ok && n->percent_correct >= 92.0 && n->percent_correct <= 100.0 && !h->applicable;
            d << " (need proposed>=99, nlp in [92,100], hk n/a)";
        }
    }
    report(id, ok, d.str());
}

// 3 ---------------------------------------------------------------------------

void criterion_map_argmin() {
    int hits = 0;
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        models::SimSpec spec;
        spec.model = "scalar1";
        spec.seed = seed;
        const auto sim = models::simulate(spec);
        SamplerConfig c = preset_sampler("scalar1");
        c.mode = SamplerMode::Grid;
        c.grid_steps = {201};
        const auto cands = sample_xi2(sim.model->space(), c);
        double best = std::numeric_limits<double>::infinity(), arg = 0.0;
        for (const auto &xi2 : cands) {
            const auto r = evaluate_candidate(*sim.model, sim.data, xi2);
            if (r.usable && r.traceR < best) {
                best = r.traceR;
                arg = xi2[0];
            }
        }
        const double err = std::abs(arg - sim.truth.xi2[0]);
        worst = std::max(worst, err);
        hits += err <= kMapArgminTol;
    }
    report(3, hits >= 95,
           "scalar1 Tr[R] grid argmin within 0.03 of b=0.1 in " + std::to_string(hits) +
               "/100 seeds (need >=95; worst miss " + fmt("%.3f", worst) + ")");
}

// 4 ---------------------------------------------------------------------------

void criterion_consistency() {
    bool all_ok = true;
    std::ostringstream d;
    for (const std::string id : {"scalar1", "scalar2"}) {
        const int runs = 200;
        const Index n = models::default_space(id).n1() + models::default_space(id).n2();
        std::vector<int> inside(static_cast<std::size_t>(n), 0);
        for (int i = 0; i < runs; ++i) {
            models::SimSpec spec;
            spec.model = id;
            spec.seed = 10000 + static_cast<std::uint64_t>(i);
            const auto sim = models::simulate(spec);
            try {
                const auto [s1, est] = run_two_stage(*sim.model, sim.data, preset_sampler(id), preset_solver(id));
                note_alt("c4/" + id, est.converged, est.alternations, est.last_rel_dr);
                if (!est.converged)
                    continue;
                const Vector truth = (Vector(n) << sim.truth.xi1, sim.truth.xi2).finished();
                const Vector xi = est.xi();
                for (Index k = 0; k < n; ++k)
                    inside[static_cast<std::size_t>(k)] +=
                        std::abs(xi[k] - truth[k]) <= kSigmaBand * est.stddev[k];
            } catch (const EstimationError &) {
            }
        }
        const auto &sp = models::default_space(id);
        d << id << ":";
        for (Index k = 0; k < n; ++k) {
            const double pct = 100.0 * inside[static_cast<std::size_t>(k)] / runs;
            const std::string &name = k < sp.n1() ? sp.names1[std::size_t(k)] : sp.names2[std::size_t(k - sp.n1())];
            d << " " << name << "=" << fmt("%.1f", pct) << "%";
            all_ok = all_ok && pct >= 93.0;
        }
        d << "; ";
    }
    report(4, all_ok, d.str() + "(need each >=93% within 3 sd over 200 fresh runs)");
}

// 5 ---------------------------------------------------------------------------

void criterion_bracket() {
    int upper = 0, lower = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        models::SimSpec spec;
        spec.model = "scalar1";
        spec.seed = 500 + seed;
        const auto sim = models::simulate(spec);
        const auto [s1, est] =
            run_two_stage(*sim.model, sim.data, preset_sampler("scalar1"), preset_solver("scalar1"));
        note_alt("c5", est.converged, est.alternations, est.last_rel_dr);
        const BoundsReport b = compute_bounds(*sim.model, sim.data, s1, est, 1000, seed);
        upper += b.upper_holds;
        lower += b.lower_holds;
    }
    report(5, upper == 100 && lower == 100,
           "J_final <= J_stage1 in " + std::to_string(upper) + "/100, J_stage1 - E <= J_final in " +
               std::to_string(lower) + "/100 (R = I, 1000 Lipschitz samples)");
}

// 6 ---------------------------------------------------------------------------

void criterion_error_bound() {
    const double e = error_bound(100, 2, 0.1, 1, 1);
    bool mono = true;
    const double base[5] = {100, 2, 0.1, 1, 1};
    for (int arg = 0; arg < 5; ++arg) {
        double prev = -1.0;
        for (double scale : {0.5, 1.0, 1.5, 2.0, 4.0}) {
            double a[5];
            std::copy(base, base + 5, a);
            a[arg] *= scale;
            const double v = error_bound(a[0], a[1], a[2], a[3], a[4]);
            mono = mono && v >= prev;
            prev = v;
        }
    }
    mono = mono && error_bound(100, 2, 0.0, 1, 1) == 0.0;
    report(6, e == 2.5 && mono,
           "error_bound(100,2,0.1,1,1)=" + fmt("%.17g", e) + (mono ? ", monotone in every argument" : ", NOT monotone"));
}

// 7 ---------------------------------------------------------------------------

void criterion_zero_noise() {
    bool ok = true;
    std::ostringstream d;
    for (const auto &id : models::model_ids()) {
        models::SimSpec spec;
        spec.model = id;
        spec.seed = 7;
        spec.noise_std = Vector::Zero(1);
        const auto sim = models::simulate(spec);
        double err = std::numeric_limits<double>::infinity();
        try {
            const auto [s1, est] = run_two_stage(*sim.model, sim.data, preset_sampler(id), preset_solver(id));
            note_alt("c7/" + id, est.converged, est.alternations, est.last_rel_dr);
            const Vector truth = (Vector(est.xi().size()) << sim.truth.xi1, sim.truth.xi2).finished();
            err = (est.xi() - truth).lpNorm<Eigen::Infinity>();
        } catch (const EstimationError &e) {
            d << id << " threw: " << e.what() << "; ";
        }
        ok = ok && err <= kZeroNoiseTol;
        d << id << "=" << fmt("%.2e", err) << " ";
    }
    report(7, ok, "sigma=0 round trip, max |xi_true - xi_hat|: " + d.str() + "(need <=1e-6)");
}

// 8 ---------------------------------------------------------------------------

void criterion_pitot() {
    int recovered = 0, flat = 0, joint = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        models::SimSpec spec;
        spec.model = "pitot";
        spec.seed = seed;
        spec.noise_std = Vector::Constant(1, 1.0);
        const auto sim = models::simulate(spec);
        SamplerConfig sc = preset_sampler("pitot");
        sc.seed = seed;
        try {
            const auto [s1, est] = run_two_stage(*sim.model, sim.data, sc, preset_solver("pitot"));
            note_alt("c8", est.converged, est.alternations, est.last_rel_dr);
            flat += s1.verdict == Verdict::Flat;
            joint += est.mode_used == SolveMode::Joint;
            bool ok = est.converged && std::abs(est.xi1[0] - sim.truth.xi1[0]) <= kLambdaVaTol;
            for (int w = 2; w < 5; ++w)
                ok = ok && std::abs(est.xi1[w] - sim.truth.xi1[w]) <= kWindTol;
            recovered += ok;
        } catch (const EstimationError &) {
        }
    }
    report(8, recovered >= 18 && flat >= 18 && joint == flat,
           "pitot sigma=1: wind/lambda_Va recovered " + std::to_string(recovered) + "/20, verdict flat " +
               std::to_string(flat) + "/20, joint dispatch " + std::to_string(joint) + "/20 (need 18, 18, joint on flat)");
}

// 9 ---------------------------------------------------------------------------

void criterion_alternation() {
    std::size_t bad = 0;
    std::string first_bad;
    for (const auto &a : g_alt) {
        if (a.alternations > kMaxAlternations || !(a.last_rel_dr < kRelDrTol)) {
            if (!bad)
                first_bad = a.source + " alternations=" + std::to_string(a.alternations) +
                            " rel_dr=" + fmt("%.3g", a.last_rel_dr);
            ++bad;
        }
    }
    report(9, bad == 0 && !g_alt.empty(),
           std::to_string(g_alt.size() - bad) + "/" + std::to_string(g_alt.size()) +
               " converged runs ended within 20 alternations with |dr/r| < 0.05" +
               (bad ? " (first violation: " + first_bad + ")" : ""));
}

// 10 --------------------------------------------------------------------------

std::string slurp(const fs::path &p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

/// Runs the command twice in fresh directories and compares every data file.
bool same_outputs(const std::string &command, const std::string &config, std::optional<unsigned> threads_a,
                  std::optional<unsigned> threads_b, std::string &why) {
    const fs::path root = fs::temp_directory_path() / "twostage_acceptance";
    std::vector<std::map<std::string, std::string>> outs;
    for (int rep = 0; rep < 2; ++rep) {
        cli::RunOptions o = load_config(config);
        o.out = root / (command + "_" + config + "_" + std::to_string(rep));
        fs::remove_all(o.out);
        o.threads = rep == 0 ? threads_a : threads_b;
        std::ostringstream sink, err;
        o.console = &sink;
        const int code = cli::dispatch(command, o, err);
        if (code != cli::kExitOk) {
            why = command + " " + config + " exited " + std::to_string(code) + ": " + err.str();
            return false;
        }
        std::map<std::string, std::string> files;
        for (const auto &e : fs::directory_iterator(o.out))
            if (e.path().filename() != "run.log")
                files[e.path().filename().string()] = slurp(e.path());
        outs.push_back(std::move(files));
    }
    if (outs[0].empty() || outs[0] != outs[1]) {
        why = command + " " + config + " outputs differ";
        return false;
    }
    return true;
}

void criterion_determinism() {
    struct Case {
        const char *command, *config;
        std::optional<unsigned> ta, tb;
    };
    const Case cases[] = {
        {"simulate", "scalar1_simulate.json", 1, 1},
        {"stage1-map", "scalar1_stage1_map.json", 1, 1},
        {"stage1-map", "scalar2_stage1_map.json", 1, 3},
        {"estimate", "scalar1_estimate.json", 1, 1},
        {"bounds", "scalar1_estimate.json", 1, 1},
        {"bench", "table1_bench.json", 1, 3},
        {"bench", "table3_bench.json", 1, 1},
        {"estimate", "pitot_estimate.json", 1, 2},
    };
    bool ok = true;
    std::string why;
    int n = 0;
    for (const auto &c : cases) {
        std::string w;
        if (!same_outputs(c.command, c.config, c.ta, c.tb, w)) {
            ok = false;
            why += w + "; ";
        }
        ++n;
    }
    report(10, ok,
           std::to_string(n) + " commands repeated with identical seeds" +
               (ok ? ": byte-identical data files (including across thread counts)" : ": " + why));
}

} // namespace

int main() {
    const auto t0 = std::chrono::steady_clock::now();
    criterion_mc(1, "table1_bench.json", true);
    criterion_mc(2, "table3_bench.json", false);
    criterion_map_argmin();
    criterion_consistency();
    criterion_bracket();
    criterion_error_bound();
    criterion_zero_noise();
    criterion_pitot();
    criterion_alternation();
    criterion_determinism();
    std::printf("acceptance: %d failing criteria, %.1fs total\n", g_failures, seconds_since(t0));
    return g_failures == 0 ? 0 : 1;
}
