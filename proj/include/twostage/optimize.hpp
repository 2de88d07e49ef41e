// Box-constrained Levenberg-Marquardt on a residual vector, cost = 0.5 ||r(x)||^2.
#pragma once

#include "canon.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace twostage {

/// Evaluates r(x); returns false when the residual cannot be computed.
using ResidualFn = std::function<bool(const Vector &x, Vector &r)>;
/// Fills J = dr/dx at x (r is the residual at x); returns false on failure.
using JacobianFn = std::function<bool(const Vector &x, const Vector &r, Matrix &J)>;

struct LmOptions {
    double grad_tol = 1e-10; ///< on the scaled projected gradient (cosine measure)
    double step_tol = 1e-12; ///< relative step length
    double ftol = 1e-15;     ///< relative cost decrease of an accepted step
    int max_iters = 200;
    double lambda0 = 1e-3;
};

enum class LmStop { Gradient, Step, CostStall, MaxIters, Failure };

inline const char *to_string(LmStop s) {
    switch (s) {
    case LmStop::Gradient:
        return "gradient";
    case LmStop::Step:
        return "step";
    case LmStop::CostStall:
        return "cost-stall";
    case LmStop::MaxIters:
        return "max-iters";
    case LmStop::Failure:
        return "failure";
    }
    return "unknown";
}

struct LmInfo {
    int iterations = 0;
    LmStop stop = LmStop::Failure;
    bool converged = false;
    double cost = std::numeric_limits<double>::infinity();
    double first_order = std::numeric_limits<double>::infinity();
    std::vector<double> cost_trace; ///< cost at x0 and after every accepted step
    bool box_feasible = true;       ///< every accepted iterate stayed inside the box
};

struct LmResult {
    Vector x;
    LmInfo info;
};

inline Vector clamp_to_box(const Vector &x, const Vector &lo, const Vector &hi) {
    return x.cwiseMax(lo).cwiseMin(hi);
}

/// Central-difference Jacobian of r for columns [first, last); one-sided at bounds.
inline bool fd_residual_jacobian(const ResidualFn &fn, const Vector &x, const Vector &lo,
                                 const Vector &hi, Index first, Index last, Matrix &J) {
    Vector rp, rm;
    for (Index j = first; j < last; ++j) {
        const double h = 6e-6 * std::max(1.0, std::abs(x[j]));
        double up = h, down = -h;
        if (x[j] + h > hi[j])
            up = 0.0;
        if (x[j] - h < lo[j])
            down = 0.0;
        if (up == 0.0 && down == 0.0) {
            up = h;
            down = -h;
        }
        Vector xp = x, xm = x;
        xp[j] += up;
        xm[j] += down;
        if (!fn(xp, rp) || !fn(xm, rm))
            return false;
        J.col(j) = (rp - rm) / (up - down);
    }
    return true;
}

/// Gradient J^T r the optimizer works with at x.
inline Vector lm_gradient(const ResidualFn &fn, const JacobianFn &jac, const Vector &x,
                          const Vector &lo, const Vector &hi) {
    Vector r;
    if (!fn(x, r))
        throw EstimationError("lm_gradient: residual evaluation failed");
    Matrix J(r.size(), x.size());
    const bool ok = jac ? jac(x, r, J) : fd_residual_jacobian(fn, x, lo, hi, 0, x.size(), J);
    if (!ok)
        throw EstimationError("lm_gradient: Jacobian evaluation failed");
    return J.transpose() * r;
}

/// Projected Levenberg-Marquardt. Variables sitting on a bound with the
/// gradient pointing outward are frozen for the step; trial points are
/// projected onto the box, so every iterate is feasible.
inline LmResult minimize_box_lm(const ResidualFn &fn, const JacobianFn &jac, const Vector &x0,
                                const Vector &lo, const Vector &hi, const LmOptions &opt = {}) {
    const Index n = x0.size();
    LmResult out;
    out.x = clamp_to_box(x0, lo, hi);
    Vector r;
    if (!fn(out.x, r) || !r.allFinite()) {
        out.info.stop = LmStop::Failure;
        return out;
    }
    double f = 0.5 * r.squaredNorm();
    out.info.cost_trace.push_back(f);
    double lambda = opt.lambda0;
    Matrix J(r.size(), n);

    for (int it = 0;; ++it) {
        out.info.iterations = it;
        out.info.cost = f;
        const bool jac_ok = jac ? jac(out.x, r, J) : fd_residual_jacobian(fn, out.x, lo, hi, 0, n, J);
        if (!jac_ok || !J.allFinite()) {
            out.info.stop = LmStop::Failure;
            break;
        }
        const Vector g = J.transpose() * r;
        const double rnorm = r.norm();
        std::vector<Index> free_idx;
        double first_order = 0.0;
        for (Index i = 0; i < n; ++i) {
            const bool pinned = (out.x[i] <= lo[i] && g[i] > 0.0) || (out.x[i] >= hi[i] && g[i] < 0.0);
            if (pinned)
                continue;
            free_idx.push_back(i);
            const double cn = J.col(i).norm() * rnorm;
            if (cn > 0.0)
                first_order = std::max(first_order, std::abs(g[i]) / cn);
        }
        out.info.first_order = first_order;
        if (rnorm == 0.0 || first_order <= opt.grad_tol || free_idx.empty()) {
            out.info.stop = LmStop::Gradient;
            break;
        }
        if (it >= opt.max_iters) {
            out.info.stop = LmStop::MaxIters;
            break;
        }

        const Index nf = static_cast<Index>(free_idx.size());
        Matrix H(nf, nf);
        Vector gf(nf);
        for (Index a = 0; a < nf; ++a) {
            gf[a] = g[free_idx[a]];
            for (Index b = 0; b < nf; ++b)
                H(a, b) = J.col(free_idx[a]).dot(J.col(free_idx[b]));
        }
        const double dmax = std::max(H.diagonal().maxCoeff(), std::numeric_limits<double>::min());
        Vector D = H.diagonal().cwiseMax(1e-12 * dmax);

        bool accepted = false;
        bool stop = false;
        while (!accepted && !stop) {
            Matrix Hd = H;
            Hd.diagonal() += lambda * D;
            Vector df = Hd.ldlt().solve(-gf);
            Vector trial = out.x;
            for (Index a = 0; a < nf; ++a)
                trial[free_idx[a]] += df[a];
            trial = clamp_to_box(trial, lo, hi);
            const double step = (trial - out.x).norm();
            if (!df.allFinite() || step <= opt.step_tol * (out.x.norm() + opt.step_tol)) {
                out.info.stop = LmStop::Step;
                stop = true;
                break;
            }
            Vector rt;
            if (fn(trial, rt) && rt.allFinite()) {
                const double ft = 0.5 * rt.squaredNorm();
                if (ft < f) {
                    const double decrease = f - ft;
                    out.x = trial;
                    r = std::move(rt);
                    f = ft;
                    out.info.cost_trace.push_back(f);
                    if (!((out.x.array() >= lo.array()).all() && (out.x.array() <= hi.array()).all()))
                        out.info.box_feasible = false;
                    lambda = std::max(lambda / 3.0, 1e-14);
                    accepted = true;
                    if (decrease <= opt.ftol * f) {
                        out.info.stop = LmStop::CostStall;
                        stop = true;
                    }
                    break;
                }
            }
            lambda *= 4.0;
            if (lambda > 1e20) {
                out.info.stop = LmStop::Step;
                stop = true;
            }
        }
        if (stop) {
            out.info.iterations = it + 1;
            out.info.cost = f;
            break;
        }
    }
    out.info.converged = out.info.stop == LmStop::Gradient || out.info.stop == LmStop::Step ||
                         out.info.stop == LmStop::CostStall;
    return out;
}

} // namespace twostage
