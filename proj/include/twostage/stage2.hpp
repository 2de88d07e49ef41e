// Stage 2: box-constrained minimization of the ML cost with alternating
// diagonal-R updates, in xi2-only (variable projection) or joint mode.
#pragma once

#include "canon.hpp"
#include "linlsq.hpp"
#include "optimize.hpp"
#include "stage1.hpp"

#include <Eigen/Eigenvalues>

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace twostage {

enum class SolveMode { Auto, Xi2Only, Joint };

inline const char *to_string(SolveMode m) {
    switch (m) {
    case SolveMode::Auto:
        return "auto";
    case SolveMode::Xi2Only:
        return "xi2-only";
    case SolveMode::Joint:
        return "joint";
    }
    return "unknown";
}

struct SolverConfig {
    SolveMode mode = SolveMode::Auto;
    int max_outer_alternations = 20;
    double r_tol = 0.05;
    double grad_tol = 1e-10;
    double step_tol = 1e-12;
    int max_iters = 200;
    std::optional<std::uint64_t> seed; ///< recorded in results; the solver itself is deterministic

    void validate() const {
        if (!(r_tol > 0.0 && r_tol < 1.0))
            throw InvalidDataError("SolverConfig: r_tol must lie in (0, 1)");
        if (max_outer_alternations < 1)
            throw InvalidDataError("SolverConfig: max_outer_alternations must be >= 1");
        if (max_iters < 1)
            throw InvalidDataError("SolverConfig: max_iters must be >= 1");
    }

    LmOptions lm() const {
        LmOptions o;
        o.grad_tol = grad_tol;
        o.step_tol = step_tol;
        o.max_iters = max_iters;
        return o;
    }
};

/// Starting point for stage 2.
struct WarmStart {
    Vector xi1;
    Vector xi2;
    DiagCov R;
};

inline WarmStart warm_start_from(const Stage1Report &rep) {
    const auto &c = rep.chosen_record();
    return {c.xi1p, c.xi2p, c.Rdiag};
}

struct EstimateResult {
    std::string model_id;
    SolveMode mode_used = SolveMode::Joint;
    Vector xi1, xi2;
    DiagCov Rdiag;
    Vector stddev;
    bool hessian_clipped = false;
    double final_cost = std::numeric_limits<double>::infinity();
    int alternations = 0;
    int inner_iters = 0;
    bool converged = false;
    bool r_converged = false;     ///< the relative R-change test passed
    double last_rel_dr = 0.0;     ///< max_j |dr_j / r_j| at the last alternation
    double inner_first_order = 0.0;
    std::string inner_stop;
    bool box_feasible = true;
    bool xi1_in_box = true;
    std::vector<double> cost_history; ///< J after each inner solve and each R update
    std::optional<std::uint64_t> seed;
    std::string note;

    Vector xi() const {
        Vector x(xi1.size() + xi2.size());
        x << xi1, xi2;
        return x;
    }
};

// -----------------------------------------------------------------------------
// Cost and covariance update
// -----------------------------------------------------------------------------

/// J = 1/2 sum_k v_k^T R^-1 v_k + (N/2) ln|R|.
inline double cost(const CanonicalModel &model, const Dataset &data, const Vector &xi1,
                   const Vector &xi2, const DiagCov &R) {
    R.validate();
    const StackedSystem sys = stack(model, data, xi2);
    if (R.r.size() != sys.m)
        throw InvalidDataError("cost: covariance dimension does not match model");
    const Matrix v = sys.residuals(xi1);
    const double N = static_cast<double>(sys.samples());
    const double quad = (v.array().square().rowwise() / R.r.transpose().array()).sum();
    return 0.5 * quad + 0.5 * N * R.r.array().log().sum();
}

/// Exact diagonal-R minimizer of J at fixed xi.
inline DiagCov update_R(const CanonicalModel &model, const Dataset &data, const Vector &xi1,
                        const Vector &xi2) {
    return residual_cov(stack(model, data, xi2).residuals(xi1));
}

/// Unweighted least-squares cost 1/2 sum ||v_k||^2 (R = I, no log term).
inline double cost_identity(const CanonicalModel &model, const Dataset &data, const Vector &xi1,
                            const Vector &xi2) {
    const StackedSystem sys = stack(model, data, xi2);
    return 0.5 * (sys.rhs() - sys.A_big * xi1).squaredNorm();
}

namespace detail {

inline Vector row_weights(const DiagCov &R, Index samples) {
    const Index m = R.r.size();
    Vector w(samples * m);
    const Vector inv_sd = R.r.cwiseSqrt().cwiseInverse();
    for (Index k = 0; k < samples; ++k)
        w.segment(k * m, m) = inv_sd;
    return w;
}

/// Weighted residual functions at fixed R.
struct WeightedProblem {
    const CanonicalModel &model;
    const Dataset &data;
    Vector w;
    Vector z;
    Index n1, n2;

    WeightedProblem(const CanonicalModel &mdl, const Dataset &d, const DiagCov &R)
        : model(mdl), data(d), w(row_weights(R, static_cast<Index>(d.size()))), z(d.stacked_z()),
          n1(mdl.space().n1()), n2(mdl.space().n2()) {}

    bool eval_system(const Vector &xi2, Matrix &A, Vector &b) const {
        const Index rows = z.size();
        A.resize(rows, n1);
        b.resize(rows);
        model.evaluate(data.contexts, xi2, A, b);
        return A.allFinite() && b.allFinite();
    }

    /// Joint residual over x = [xi1; xi2].
    bool joint_residual(const Vector &x, Vector &r) const {
        Matrix A;
        Vector b;
        if (!eval_system(x.tail(n2), A, b))
            return false;
        r = w.cwiseProduct(z - b - A * x.head(n1));
        return true;
    }

    /// dr/dxi1 = -W A exactly; dr/dxi2 by central differences.
    bool joint_jacobian(const Vector &x, const Vector &, Matrix &J, const Vector &lo,
                        const Vector &hi) const {
        Matrix A;
        Vector b;
        if (!eval_system(x.tail(n2), A, b))
            return false;
        J.resize(z.size(), n1 + n2);
        J.leftCols(n1) = -(w.asDiagonal() * A);
        ResidualFn fn = [this](const Vector &xx, Vector &rr) { return joint_residual(xx, rr); };
        return fd_residual_jacobian(fn, x, lo, hi, n1, n1 + n2, J);
    }

    /// Weighted least-squares xi1 for fixed xi2.
    std::optional<Vector> projected_xi1(const Vector &xi2) const {
        Matrix A;
        Vector b;
        if (!eval_system(xi2, A, b))
            return std::nullopt;
        try {
            return solve_least_squares(w.asDiagonal() * A, w.cwiseProduct(z - b));
        } catch (const SingularSystemError &) {
            return std::nullopt;
        }
    }

    /// Variable-projection residual over xi2 only.
    bool projected_residual(const Vector &xi2, Vector &r) const {
        Matrix A;
        Vector b;
        if (!eval_system(xi2, A, b))
            return false;
        const Matrix Aw = w.asDiagonal() * A;
        const Vector yw = w.cwiseProduct(z - b);
        try {
            const Vector xi1 = solve_least_squares(Aw, yw);
            r = yw - Aw * xi1;
        } catch (const SingularSystemError &) {
            return false;
        }
        return true;
    }
};

inline double max_rel_change(const DiagCov &before, const DiagCov &after) {
    return ((after.r - before.r).array().abs() / before.r.array()).maxCoeff();
}

} // namespace detail

// -----------------------------------------------------------------------------
// Solvers
// -----------------------------------------------------------------------------

/// Generic box-constrained inner minimization of 0.5 ||r(x)||^2.
inline LmResult solve_inner(const ResidualFn &fn, const JacobianFn &jac, const Vector &x0,
                            const Vector &lo, const Vector &hi, const SolverConfig &cfg) {
    return minimize_box_lm(fn, jac, x0, lo, hi, cfg.lm());
}

/// Outer alternation shared by both modes. `inner` minimizes over the
/// mode's variables at fixed R and returns (xi1, xi2, LmInfo).
template <typename Inner>
EstimateResult alternate(const CanonicalModel &model, const Dataset &data, const WarmStart &warm,
                         const SolverConfig &cfg, SolveMode mode, Inner &&inner) {
    cfg.validate();
    EstimateResult res;
    res.model_id = model.id();
    res.mode_used = mode;
    res.seed = cfg.seed;
    res.xi1 = warm.xi1;
    res.xi2 = warm.xi2;
    DiagCov R = warm.R;
    R.validate();
    res.cost_history.push_back(cost(model, data, res.xi1, res.xi2, R));
    LmInfo last;
    for (int alt = 1; alt <= cfg.max_outer_alternations; ++alt) {
        res.alternations = alt;
        auto [xi1, xi2, info] = inner(res.xi1, res.xi2, R);
        res.xi1 = std::move(xi1);
        res.xi2 = std::move(xi2);
        res.inner_iters += info.iterations;
        res.box_feasible &= info.box_feasible;
        last = info;
        res.cost_history.push_back(cost(model, data, res.xi1, res.xi2, R));
        const DiagCov Rn = update_R(model, data, res.xi1, res.xi2);
        res.last_rel_dr = detail::max_rel_change(R, Rn);
        R = Rn;
        res.cost_history.push_back(cost(model, data, res.xi1, res.xi2, R));
        if (res.last_rel_dr < cfg.r_tol) {
            res.r_converged = true;
            break;
        }
    }
    res.Rdiag = R;
    res.inner_first_order = last.first_order;
    res.inner_stop = to_string(last.stop);
    res.converged = res.r_converged && last.converged;
    return res;
}

inline void finalize_stddev(const CanonicalModel &model, const Dataset &data, EstimateResult &res);

/// xi2-only mode: xi1 = wls(xi2, R) inside the objective.
inline EstimateResult solve_xi2_only(const CanonicalModel &model, const Dataset &data,
                                     const WarmStart &warm, const SolverConfig &cfg) {
    const ParamSpace &sp = model.space();
    auto inner = [&](const Vector &, const Vector &xi2, const DiagCov &R) {
        detail::WeightedProblem prob(model, data, R);
        ResidualFn fn = [&prob](const Vector &x, Vector &r) { return prob.projected_residual(x, r); };
        LmResult lm = solve_inner(fn, nullptr, xi2, sp.lo2, sp.hi2, cfg);
        auto xi1 = prob.projected_xi1(lm.x);
        if (!xi1)
            throw SingularSystemError("solve_xi2_only: weighted system singular at the solution", 0);
        return std::make_tuple(*xi1, lm.x, lm.info);
    };
    EstimateResult res = alternate(model, data, warm, cfg, SolveMode::Xi2Only, inner);
    // Final xi1 by weighted least squares at the converged (xi2, R).
    detail::WeightedProblem prob(model, data, res.Rdiag);
    if (auto xi1 = prob.projected_xi1(res.xi2))
        res.xi1 = *xi1;
    res.final_cost = cost(model, data, res.xi1, res.xi2, res.Rdiag);
    res.cost_history.push_back(res.final_cost);
    res.xi1_in_box = sp.contains1(res.xi1, 1e-9);
    finalize_stddev(model, data, res);
    return res;
}

inline EstimateResult solve_xi2_only(const CanonicalModel &model, const Dataset &data,
                                     const Stage1Report &warm, const SolverConfig &cfg) {
    if (warm.verdict != Verdict::UniqueMinimum)
        throw InvalidDataError("solve_xi2_only: stage 1 did not report a unique minimum");
    return solve_xi2_only(model, data, warm_start_from(warm), cfg);
}

/// Joint mode over the concatenated (xi1, xi2) box.
inline EstimateResult solve_joint(const CanonicalModel &model, const Dataset &data,
                                  const WarmStart &warm, const SolverConfig &cfg) {
    const ParamSpace &sp = model.space();
    const Vector lo = sp.lower(), hi = sp.upper();
    const Index n1 = sp.n1();
    WarmStart start = warm;
    start.xi1 = warm.xi1.cwiseMax(sp.lo1).cwiseMin(sp.hi1);
    start.xi2 = clamp_box(warm.xi2, sp);
    auto inner = [&](const Vector &xi1, const Vector &xi2, const DiagCov &R) {
        detail::WeightedProblem prob(model, data, R);
        ResidualFn fn = [&prob](const Vector &x, Vector &r) { return prob.joint_residual(x, r); };
        JacobianFn jac = [&prob, &lo, &hi](const Vector &x, const Vector &r, Matrix &J) {
            return prob.joint_jacobian(x, r, J, lo, hi);
        };
        Vector x0(n1 + sp.n2());
        x0 << xi1, xi2;
        LmResult lm = solve_inner(fn, jac, x0, lo, hi, cfg);
        return std::make_tuple(Vector(lm.x.head(n1)), Vector(lm.x.tail(sp.n2())), lm.info);
    };
    EstimateResult res = alternate(model, data, start, cfg, SolveMode::Joint, inner);
    res.final_cost = cost(model, data, res.xi1, res.xi2, res.Rdiag);
    res.xi1_in_box = sp.contains1(res.xi1, 1e-12);
    finalize_stddev(model, data, res);
    return res;
}

inline EstimateResult solve_joint(const CanonicalModel &model, const Dataset &data,
                                  const Stage1Report &warm, const SolverConfig &cfg) {
    return solve_joint(model, data, warm_start_from(warm), cfg);
}

// -----------------------------------------------------------------------------
// Standard deviations
// -----------------------------------------------------------------------------

struct StddevResult {
    Vector stddev;
    bool clipped = false;
    Matrix hessian;
};

/// sqrt(diag(H^-1)) with H the central-difference Hessian of J over [xi1; xi2]
/// at fixed R. Eigenvalues below 1e-10 lambda_max are clipped.
inline StddevResult stddevs(const CanonicalModel &model, const Dataset &data, const Vector &xi1,
                            const Vector &xi2, const DiagCov &R) {
    const Index n = xi1.size() + xi2.size();
    Vector x(n);
    x << xi1, xi2;
    detail::WeightedProblem prob(model, data, R);
    auto J = [&](const Vector &p) {
        Vector r;
        if (!prob.joint_residual(p, r))
            throw InvalidModelError("stddevs: non-finite model output");
        return 0.5 * r.squaredNorm();
    };
    Vector h(n);
    for (Index i = 0; i < n; ++i)
        h[i] = 1e-4 * std::max(1.0, std::abs(x[i]));
    const double f0 = J(x);
    Matrix H(n, n);
    for (Index i = 0; i < n; ++i) {
        Vector xp = x, xm = x;
        xp[i] += h[i];
        xm[i] -= h[i];
        H(i, i) = (J(xp) - 2.0 * f0 + J(xm)) / (h[i] * h[i]);
        for (Index j = 0; j < i; ++j) {
            Vector pp = x, pm = x, mp = x, mm = x;
            pp[i] += h[i], pp[j] += h[j];
            pm[i] += h[i], pm[j] -= h[j];
            mp[i] -= h[i], mp[j] += h[j];
            mm[i] -= h[i], mm[j] -= h[j];
            H(i, j) = H(j, i) = (J(pp) - J(pm) - J(mp) + J(mm)) / (4.0 * h[i] * h[j]);
        }
    }
    StddevResult out;
    out.hessian = H;
    Eigen::SelfAdjointEigenSolver<Matrix> es(H);
    Vector lam = es.eigenvalues();
    const double lmax = lam.maxCoeff();
    const double floor = 1e-10 * std::max(lmax, std::numeric_limits<double>::min());
    for (Index i = 0; i < n; ++i) {
        if (!(lam[i] >= floor)) {
            lam[i] = floor;
            out.clipped = true;
        }
    }
    const Matrix inv = es.eigenvectors() * lam.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
    out.stddev = inv.diagonal().cwiseMax(0.0).cwiseSqrt();
    return out;
}

inline void finalize_stddev(const CanonicalModel &model, const Dataset &data, EstimateResult &res) {
    const auto s = stddevs(model, data, res.xi1, res.xi2, res.Rdiag);
    res.stddev = s.stddev;
    res.hessian_clipped = s.clipped;
}

// -----------------------------------------------------------------------------
// Driver
// -----------------------------------------------------------------------------

namespace detail {

template <typename F> auto with_stage_tag(const std::string &tag, F &&f) -> decltype(f()) {
    try {
        return f();
    } catch (const SingularSystemError &e) {
        throw SingularSystemError(tag + ": " + e.what(), e.rank(), e.condition());
    } catch (const InvalidDataError &e) {
        throw InvalidDataError(tag + ": " + e.what());
    } catch (const InvalidModelError &e) {
        throw InvalidModelError(tag + ": " + e.what());
    } catch (const OutOfBoundsError &e) {
        throw OutOfBoundsError(tag + ": " + e.what());
    } catch (const EstimationError &e) {
        throw EstimationError(tag + ": " + e.what());
    }
}

} // namespace detail

/// Stage 2 from an existing stage-1 report. In auto mode a unique verdict
/// selects xi2-only; if that leaves xi1 outside its box the joint solve is
/// run from the same warm start instead.
inline EstimateResult run_stage2(const CanonicalModel &model, const Dataset &data,
                                 const Stage1Report &s1, const SolverConfig &cfg) {
    return detail::with_stage_tag("stage2", [&] {
        const WarmStart warm = warm_start_from(s1);
        switch (cfg.mode) {
        case SolveMode::Xi2Only:
            return solve_xi2_only(model, data, warm, cfg);
        case SolveMode::Joint:
            return solve_joint(model, data, warm, cfg);
        case SolveMode::Auto:
            break;
        }
        if (s1.verdict != Verdict::UniqueMinimum)
            return solve_joint(model, data, warm, cfg);
        EstimateResult r = solve_xi2_only(model, data, warm, cfg);
        if (!r.xi1_in_box) {
            EstimateResult j = solve_joint(model, data, warm, cfg);
            j.note = "xi2-only estimate left the xi1 box; joint solve used";
            return j;
        }
        return r;
    });
}

inline std::pair<Stage1Report, EstimateResult> run_two_stage(const CanonicalModel &model,
                                                             const Dataset &data,
                                                             const SamplerConfig &s1cfg,
                                                             const SolverConfig &s2cfg) {
    Stage1Report s1 = detail::with_stage_tag("stage1", [&] { return run_stage1(model, data, s1cfg); });
    EstimateResult s2 = run_stage2(model, data, s1, s2cfg);
    return {std::move(s1), std::move(s2)};
}

} // namespace twostage
