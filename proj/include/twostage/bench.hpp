// Benchmark estimators (single-shot constrained NLP and the Haupt/Kasdin
// two-step estimator) and the seeded Monte-Carlo comparison harness.
#pragma once

#include "canon.hpp"
#include "linlsq.hpp"
#include "models/simulate.hpp"
#include "optimize.hpp"
#include "parallel.hpp"
#include "stage1.hpp"
#include "stage2.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace twostage {

// -----------------------------------------------------------------------------
// Benchmark 1: classic constrained NLP
// -----------------------------------------------------------------------------

/// Joint box-constrained minimization from an arbitrary start. R starts from
/// the residuals at the start point.
inline EstimateResult classic_nlp(const CanonicalModel &model, const Dataset &data, const Vector &init,
                                  const SolverConfig &cfg) {
    const ParamSpace &sp = model.space();
    if (init.size() != sp.n1() + sp.n2())
        throw InvalidDataError("classic_nlp: init has wrong length");
    const Vector x0 = clamp_to_box(init, sp.lower(), sp.upper());
    WarmStart w;
    w.xi1 = x0.head(sp.n1());
    w.xi2 = x0.tail(sp.n2());
    w.R = update_R(model, data, w.xi1, w.xi2);
    return solve_joint(model, data, w, cfg);
}

// -----------------------------------------------------------------------------
// Benchmark 2: Haupt/Kasdin two-step (scalar1 family only)
// -----------------------------------------------------------------------------

struct HkStep1 {
    Vector y_hat; ///< [a cos b, a sin b, cos b, sin b, c]
    Matrix P_y;
    Index rank = 0;
    double condition = 0.0;
    bool rank_warning = false;
    double sigma2 = 0.0;
};

/// Row H_k = [cos eta, -sin eta, cos eta, -sin eta, 1].
inline Eigen::Matrix<double, 1, 5> hk_row(double eta) {
    Eigen::Matrix<double, 1, 5> h;
    h << std::cos(eta), -std::sin(eta), std::cos(eta), -std::sin(eta), 1.0;
    return h;
}

/// Linear first step. Columns 1-2 of H repeat columns 3-4, so the stacked
/// matrix has rank 3 at most; the minimum-norm solution is returned together
/// with a rank warning. P_y = s^2 (H^T H)^+ with s^2 = RSS / (N - rank).
inline HkStep1 hk_step1(const Dataset &data) {
    const Index N = static_cast<Index>(data.size());
    if (N < 5)
        throw InvalidDataError("hk_step1: needs at least 5 samples (N=" + std::to_string(N) + ")");
    Matrix H(N, 5);
    Vector z(N);
    for (Index k = 0; k < N; ++k) {
        const auto &c = data.contexts[static_cast<std::size_t>(k)];
        if (c.x.size() != 1 || data.z[static_cast<std::size_t>(k)].size() != 1)
            throw InvalidDataError("hk_step1: expects scalar measurements with x = [eta]");
        H.row(k) = hk_row(c.x[0]);
        z[k] = data.z[static_cast<std::size_t>(k)][0];
    }
    Eigen::JacobiSVD<Matrix> svd(H);
    const Vector sv = svd.singularValues();
    HkStep1 out;
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(H);
    cod.setThreshold(kRankTolerance);
    cod.compute(H);
    out.rank = cod.rank();
    const Index r = out.rank;
    out.condition = r > 0 ? sv[0] / sv[r - 1] : std::numeric_limits<double>::infinity();
    if (r < 3)
        throw SingularSystemError("hk_step1: stacked H has rank " + std::to_string(r), r, out.condition);
    out.rank_warning = r < 5;
    out.y_hat = cod.solve(z);
    const double rss = (z - H * out.y_hat).squaredNorm();
    out.sigma2 = N > r ? rss / static_cast<double>(N - r) : 0.0;
    out.P_y = out.sigma2 * cod.pseudoInverse() * cod.pseudoInverse().transpose();
    return out;
}

inline Vector hk_f(const Vector &xi) {
    const double a = xi[0], b = xi[1], c = xi[2];
    Vector f(5);
    f << a * std::cos(b), a * std::sin(b), std::cos(b), std::sin(b), c;
    return f;
}

struct HkStep2 {
    Vector xi; ///< [a, b, c]
    LmInfo info;
};

/// Unconstrained minimization of (y - f)^T P_y^+ (y - f) over (a, b, c).
inline HkStep2 hk_step2(const Vector &y_hat, const Matrix &P_y, const Vector &init, const LmOptions &opt = {}) {
    if (y_hat.size() != 5 || P_y.rows() != 5 || P_y.cols() != 5 || init.size() != 3)
        throw InvalidDataError("hk_step2: expects y_hat(5), P_y(5x5), init(3)");
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (P_y + P_y.transpose()));
    const Vector lam = es.eigenvalues();
    const double cut = 1e-10 * std::max(lam.maxCoeff(), std::numeric_limits<double>::min());
    Vector sqrt_w(5);
    for (Index i = 0; i < 5; ++i)
        sqrt_w[i] = lam[i] > cut ? 1.0 / std::sqrt(lam[i]) : 0.0;
    const Matrix L = sqrt_w.asDiagonal() * es.eigenvectors().transpose();
    ResidualFn fn = [&](const Vector &x, Vector &r) {
        r = L * (y_hat - hk_f(x));
        return r.allFinite();
    };
    JacobianFn jac = [&](const Vector &x, const Vector &, Matrix &J) {
        const double a = x[0], b = x[1];
        Matrix df = Matrix::Zero(5, 3);
        df(0, 0) = std::cos(b);
        df(0, 1) = -a * std::sin(b);
        df(1, 0) = std::sin(b);
        df(1, 1) = a * std::cos(b);
        df(2, 1) = -std::sin(b);
        df(3, 1) = std::cos(b);
        df(4, 2) = 1.0;
        J = -L * df;
        return true;
    };
    const double inf = std::numeric_limits<double>::infinity();
    const LmResult lm = minimize_box_lm(fn, jac, init, Vector::Constant(3, -inf), Vector::Constant(3, inf), opt);
    return {lm.x, lm.info};
}

// -----------------------------------------------------------------------------
// Monte-Carlo harness
// -----------------------------------------------------------------------------

struct McConfig {
    std::size_t n_runs = 1000;
    models::SimSpec sim;       ///< dataset recipe; its seed generates the fixed dataset
    Vector init_mean, init_std; ///< per parameter, in model order [xi1; xi2]
    double tau_c = 0.1;
    std::uint64_t master_seed = 1;
    bool fresh_data = false;
    std::vector<std::string> estimators = {"proposed", "nlp", "hk"};
    SamplerConfig stage1;
    SolverConfig stage2;
    unsigned threads = 1;
    bool record_timing = false;

    void validate() const {
        if (n_runs < 1)
            throw InvalidDataError("McConfig: n_runs must be >= 1");
        if (!(tau_c > 0.0))
            throw InvalidDataError("McConfig: tau_c must be positive");
        for (const auto &e : estimators)
            if (e != "proposed" && e != "nlp" && e != "hk")
                throw InvalidDataError("McConfig: unknown estimator '" + e + "'");
    }
};

struct McRun {
    std::size_t run = 0;
    std::string estimator;
    bool applicable = true;
    bool converged = false;
    double err_norm = std::numeric_limits<double>::infinity();
    bool correct = false;
    double wall_ms = 0.0;
    Vector xi_hat; ///< model order [xi1; xi2]
    int alternations = 0;
    double last_rel_dr = 0.0;
    bool r_converged = false;
};

struct McEstimatorSummary {
    std::string estimator;
    bool applicable = true;
    std::size_t correct = 0;
    std::size_t converged = 0;
    double percent_correct = 0.0;
};

struct McReport {
    std::string model;
    std::size_t n_runs = 0;
    std::uint64_t master_seed = 0;
    bool fresh_data = false;
    std::vector<McRun> runs; ///< run-major, estimator order as configured
    std::vector<McEstimatorSummary> summary;
    std::vector<std::uint64_t> seeds; ///< dataset seed per run (fixed-data: all equal)
};

/// Independent per-run stream derived from (master, run).
inline std::mt19937_64 run_rng(std::uint64_t master, std::uint64_t run) {
    std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                      static_cast<std::uint32_t>(run), static_cast<std::uint32_t>(run >> 32)};
    return std::mt19937_64(seq);
}

inline bool hk_applicable(const std::string &model) { return model == "scalar1"; }

/// HK parameter order (a, b, c) from scalar1 model order (a, c, b), and back.
inline Vector scalar1_to_hk(const Vector &x) { return (Vector(3) << x[0], x[2], x[1]).finished(); }
inline Vector hk_to_scalar1(const Vector &x) { return (Vector(3) << x[0], x[2], x[1]).finished(); }

inline McReport run_mc(const McConfig &cfg) {
    cfg.validate();
    const std::string &id = cfg.sim.model;
    const ParamSpace sp0 = cfg.sim.options.space ? *cfg.sim.options.space : models::default_space(id);
    const Index n = sp0.n1() + sp0.n2();
    if (cfg.init_mean.size() != n || cfg.init_std.size() != n)
        throw InvalidDataError("McConfig: init distribution needs one entry per parameter");

    McReport rep;
    rep.model = id;
    rep.n_runs = cfg.n_runs;
    rep.master_seed = cfg.master_seed;
    rep.fresh_data = cfg.fresh_data;
    const std::size_t ne = cfg.estimators.size();
    rep.runs.resize(cfg.n_runs * ne);
    rep.seeds.resize(cfg.n_runs);

    // Fixed-data mode: one dataset and one stage-1 report shared by all runs.
    std::optional<models::Simulation> fixed;
    std::optional<Stage1Report> fixed_s1;
    std::optional<HkStep1> fixed_hk;
    auto needs = [&](const char *e) {
        return std::find(cfg.estimators.begin(), cfg.estimators.end(), e) != cfg.estimators.end();
    };
    SamplerConfig s1cfg = cfg.stage1;
    if (!cfg.fresh_data) {
        fixed = models::simulate(cfg.sim);
        if (needs("proposed")) {
            s1cfg.threads = cfg.threads;
            fixed_s1 = run_stage1(*fixed->model, fixed->data, s1cfg);
        }
        if (needs("hk") && hk_applicable(id))
            fixed_hk = hk_step1(fixed->data);
    }

    auto body = [&](std::size_t run) {
        std::mt19937_64 rng = run_rng(cfg.master_seed, run);
        std::normal_distribution<double> n01(0.0, 1.0);
        Vector init(n);
        for (Index i = 0; i < n; ++i)
            init[i] = cfg.init_mean[i] + cfg.init_std[i] * n01(rng);
        const std::uint64_t data_seed = cfg.fresh_data ? rng() : cfg.sim.seed;
        rep.seeds[run] = data_seed;

        std::optional<models::Simulation> local;
        if (cfg.fresh_data) {
            models::SimSpec spec = cfg.sim;
            spec.seed = data_seed;
            local = models::simulate(spec);
        }
        const models::Simulation &sim = cfg.fresh_data ? *local : *fixed;
        const CanonicalModel &model = *sim.model;
        const Vector truth = (Vector(n) << sim.truth.xi1, sim.truth.xi2).finished();
        const Vector lo = model.space().lower(), hi = model.space().upper();

        for (std::size_t e = 0; e < ne; ++e) {
            McRun r;
            r.run = run;
            r.estimator = cfg.estimators[e];
            const auto t0 = std::chrono::steady_clock::now();
            try {
                if (r.estimator == "proposed") {
                    SamplerConfig c1 = cfg.stage1;
                    c1.threads = 1;
                    const Stage1Report s1 = cfg.fresh_data ? run_stage1(model, sim.data, c1) : *fixed_s1;
                    const EstimateResult est = run_stage2(model, sim.data, s1, cfg.stage2);
                    r.xi_hat = est.xi();
                    r.converged = est.converged;
                    r.alternations = est.alternations;
                    r.last_rel_dr = est.last_rel_dr;
                    r.r_converged = est.r_converged;
                } else if (r.estimator == "nlp") {
                    const EstimateResult est = classic_nlp(model, sim.data, clamp_to_box(init, lo, hi), cfg.stage2);
                    r.xi_hat = est.xi();
                    r.converged = est.converged;
                    r.alternations = est.alternations;
                    r.last_rel_dr = est.last_rel_dr;
                    r.r_converged = est.r_converged;
                } else if (!hk_applicable(id)) {
                    r.applicable = false;
                } else {
                    const HkStep1 h1 = cfg.fresh_data ? hk_step1(sim.data) : *fixed_hk;
                    const HkStep2 h2 = hk_step2(h1.y_hat, h1.P_y, scalar1_to_hk(init), cfg.stage2.lm());
                    r.xi_hat = hk_to_scalar1(h2.xi);
                    r.converged = h2.info.converged;
                }
            } catch (const EstimationError &) {
                r.converged = false;
            }
            const auto t1 = std::chrono::steady_clock::now();
            if (cfg.record_timing)
                r.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
            if (r.applicable && r.xi_hat.size() == n) {
                r.err_norm = (truth - r.xi_hat).norm();
                r.correct = r.converged && r.err_norm <= cfg.tau_c;
            }
            rep.runs[run * ne + e] = std::move(r);
        }
    };
    parallel_for(cfg.n_runs, cfg.threads, body);

    for (std::size_t e = 0; e < ne; ++e) {
        McEstimatorSummary s;
        s.estimator = cfg.estimators[e];
        s.applicable = s.estimator != "hk" || hk_applicable(id);
        for (std::size_t run = 0; run < cfg.n_runs; ++run) {
            const McRun &r = rep.runs[run * ne + e];
            s.correct += r.correct;
            s.converged += r.converged;
        }
        s.percent_correct = 100.0 * static_cast<double>(s.correct) / static_cast<double>(cfg.n_runs);
        rep.summary.push_back(s);
    }
    return rep;
}

} // namespace twostage
