// Lipschitz estimates, the cost-error bound E and the stage-1 / stage-2 cost bracket.
#pragma once

#include "canon.hpp"
#include "stage1.hpp"
#include "stage2.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace twostage {

struct LipschitzEstimate {
    double L_A = 0.0;
    double L_b = 0.0;
    std::size_t points = 0;
};

/// Uniform points in {||xi2 - center|| <= ell2} intersected with the box, drawn
/// sequentially so that a longer run extends a shorter one with the same seed.
inline std::vector<Vector> sample_ball_box(const ParamSpace &sp, const Vector &center, double ell2,
                                           std::size_t n, std::uint64_t seed) {
    const Index n2 = sp.n2();
    const Vector lo = sp.lo2.cwiseMax((center.array() - ell2).matrix());
    const Vector hi = sp.hi2.cwiseMin((center.array() + ell2).matrix());
    if ((lo.array() > hi.array()).any())
        throw InvalidDataError("sample_ball_box: ball and box do not intersect");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<Vector> out;
    const std::size_t max_attempts = 100000 * (n + 1);
    for (std::size_t attempts = 0; out.size() < n; ++attempts) {
        if (attempts > max_attempts)
            throw InvalidDataError("sample_ball_box: rejection sampling failed");
        Vector p(n2);
        for (Index i = 0; i < n2; ++i)
            p[i] = lo[i] + (hi[i] - lo[i]) * u01(rng);
        if ((p - center).norm() <= ell2)
            out.push_back(p);
    }
    return out;
}

/// Largest sampled ||A(x) - A(y)|| / ||x - y|| and the b analog, with norms
/// RMS over samples of per-sample Frobenius norms. A lower estimate of the
/// true constants.
inline LipschitzEstimate estimate_lipschitz(const CanonicalModel &model, const Dataset &data,
                                            const Vector &center, double ell2, std::size_t nsamples,
                                            std::uint64_t seed) {
    if (nsamples < 2)
        throw InvalidDataError("estimate_lipschitz: need at least two samples");
    LipschitzEstimate out;
    if (ell2 == 0.0)
        return out;
    const auto pts = sample_ball_box(model.space(), center, ell2, nsamples, seed);
    const double N = static_cast<double>(data.size());
    std::vector<detail::BatchEval> evals;
    evals.reserve(pts.size());
    for (const auto &p : pts)
        evals.push_back(detail::batch_eval(model, data, p));
    for (std::size_t i = 0; i < pts.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            const double d = (pts[i] - pts[j]).norm();
            if (!(d > 0.0))
                continue;
            out.L_A = std::max(out.L_A, std::sqrt((evals[i].A - evals[j].A).squaredNorm() / N) / d);
            out.L_b = std::max(out.L_b, std::sqrt((evals[i].b - evals[j].b).squaredNorm() / N) / d);
        }
    }
    out.points = pts.size();
    return out;
}

/// E = (N/2) ell2^2 (L_A^2 ell1^2 + L_b^2).
inline double error_bound(double N, double ell1, double ell2, double L_A, double L_b) {
    if (N < 0 || ell1 < 0 || ell2 < 0 || L_A < 0 || L_b < 0)
        throw InvalidDataError("error_bound: inputs must be non-negative");
    return 0.5 * N * ell2 * ell2 * (L_A * L_A * ell1 * ell1 + L_b * L_b);
}

/// J_stage1 - E <= J_final <= J_stage1 (+ roundoff slack).
inline bool bracket_check(double J_stage1, double E, double J_final) {
    return J_stage1 - E <= J_final && J_final <= J_stage1 + 1e-9 * std::max(1.0, std::abs(J_stage1));
}

struct BoundsReport {
    double ell1 = 0.0, ell2 = 0.0;
    double L_A = 0.0, L_b = 0.0;
    double E1 = 0.0, E2 = 0.0, E = 0.0;
    double J_stage1 = 0.0, J_final = 0.0;
    bool upper_holds = false;
    bool lower_holds = false;
    bool bracket_holds = false;
    std::size_t lipschitz_samples = 0;
};

/// Bounds for a finished two-stage run. Both costs use R = I.
inline BoundsReport compute_bounds(const CanonicalModel &model, const Dataset &data,
                                   const Stage1Report &s1, const EstimateResult &result,
                                   std::size_t lipschitz_samples = 50, std::uint64_t seed = 1) {
    const ParamSpace &sp = model.space();
    const auto &warm = s1.chosen_record();
    BoundsReport rep;
    rep.ell1 = sp.ell1;
    rep.ell2 = sp.ell2;
    const auto L = estimate_lipschitz(model, data, warm.xi2p, sp.ell2, lipschitz_samples, seed);
    rep.L_A = L.L_A;
    rep.L_b = L.L_b;
    rep.lipschitz_samples = L.points;
    rep.E1 = rep.L_A * rep.ell2 * rep.ell1;
    rep.E2 = rep.L_b * rep.ell2;
    rep.E = error_bound(static_cast<double>(data.size()), rep.ell1, rep.ell2, rep.L_A, rep.L_b);
    rep.J_stage1 = cost_identity(model, data, warm.xi1p, warm.xi2p);
    rep.J_final = cost_identity(model, data, result.xi1, result.xi2);
    rep.lower_holds = rep.J_stage1 - rep.E <= rep.J_final;
    rep.upper_holds = rep.J_final <= rep.J_stage1 + 1e-9 * std::max(1.0, std::abs(rep.J_stage1));
    rep.bracket_holds = bracket_check(rep.J_stage1, rep.E, rep.J_final);
    return rep;
}

} // namespace twostage
