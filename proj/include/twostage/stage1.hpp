// Stage 1: residual sampling over candidate xi2 values, first/second-order
// screening, the Tr[R] map and the uniqueness verdict.
#pragma once

#include "canon.hpp"
#include "linlsq.hpp"
#include "parallel.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace twostage {

enum class SamplerMode { Grid, UniformBox, Gaussian };

/// How the second-order (Hessian) screen enters the screened_ok flag.
enum class SecondOrderPolicy {
    Enforce, ///< pdA and pdB are required
    Report,  ///< computed and stored, not required
    Skip     ///< not computed (pdA = pdB = false, second_order_evaluated = false)
};

enum class Verdict { UniqueMinimum, Flat };

inline const char *to_string(Verdict v) { return v == Verdict::UniqueMinimum ? "unique" : "flat"; }

struct SamplerConfig {
    SamplerMode mode = SamplerMode::Gaussian;
    std::size_t count = 500;
    std::vector<int> grid_steps; ///< per dimension, grid mode
    Vector grid_lo, grid_hi;     ///< grid range; defaults to the box
    Vector mean, stddev;         ///< gaussian mode; mean defaults to the nominal xi2
    std::uint64_t seed = 1;
    double T1 = 0.1;
    double T2 = 0.1;
    double rho = 0.05;
    double tau = 0.1;
    SecondOrderPolicy second_order = SecondOrderPolicy::Enforce;
    unsigned threads = 1;

    void validate(Index n2) const {
        if (count < 1)
            throw InvalidDataError("SamplerConfig: count must be >= 1");
        if (!(T1 > 0.0) || !(T2 > 0.0))
            throw InvalidDataError("SamplerConfig: T1 and T2 must be positive");
        if (!(rho > 0.0))
            throw InvalidDataError("SamplerConfig: rho must be positive");
        if (!(tau > 0.0 && tau <= 1.0))
            throw InvalidDataError("SamplerConfig: tau must lie in (0, 1]");
        if (mode == SamplerMode::Grid) {
            if (static_cast<Index>(grid_steps.size()) != n2)
                throw InvalidDataError("SamplerConfig: grid_steps needs one entry per xi2 component");
            for (int s : grid_steps)
                if (s < 1)
                    throw InvalidDataError("SamplerConfig: grid steps must be >= 1");
            if ((grid_lo.size() != 0 && grid_lo.size() != n2) ||
                (grid_hi.size() != 0 && grid_hi.size() != n2))
                throw InvalidDataError("SamplerConfig: grid range has wrong length");
        }
        if (mode == SamplerMode::Gaussian) {
            if (stddev.size() != n2)
                throw InvalidDataError("SamplerConfig: stddev needs one entry per xi2 component");
            if ((stddev.array() < 0.0).any())
                throw InvalidDataError("SamplerConfig: stddev must be non-negative");
            if (mean.size() != 0 && mean.size() != n2)
                throw InvalidDataError("SamplerConfig: mean has wrong length");
        }
    }
};

struct CandidateRecord {
    Vector xi2p;
    Vector xi1p;
    double traceR = std::numeric_limits<double>::infinity();
    DiagCov Rdiag;
    double ratioA = 0.0;
    double ratioB = 0.0;
    bool b_degenerate = false; ///< ||b|| = 0, ratioB = +inf and the b test is skipped
    bool pdA = false;
    bool pdB = false;
    bool second_order_evaluated = false;
    bool in_ball = false;
    bool usable = false; ///< the linear solve succeeded
    bool screened_ok = false;
    std::string note;
};

struct Stage1Report {
    std::vector<CandidateRecord> records;
    Verdict verdict = Verdict::Flat;
    std::size_t chosen = 0; ///< index into records
    double min_trace = std::numeric_limits<double>::infinity();
    double cluster_diameter = 0.0; ///< max pairwise distance within the near-minimal set
    double ell2 = 0.0;

    const CandidateRecord &chosen_record() const { return records.at(chosen); }
};

// -----------------------------------------------------------------------------
// Candidate generation
// -----------------------------------------------------------------------------

inline Vector clamp_box(const Vector &xi2, const ParamSpace &space) {
    return xi2.cwiseMax(space.lo2).cwiseMin(space.hi2);
}

inline bool in_ball(const Vector &xi2, const Vector &center, double ell2) {
    return (xi2 - center).norm() <= ell2 * (1.0 + 1e-12) + 1e-15;
}

inline std::vector<Vector> sample_xi2(const ParamSpace &space, const SamplerConfig &cfg) {
    const Index n2 = space.n2();
    cfg.validate(n2);
    const Vector center = space.nominal2();
    const Vector nearest = clamp_box(center, space);
    if ((nearest - center).norm() > space.ell2 * (1.0 + 1e-12))
        throw InvalidDataError("sample_xi2: the l2 ball and the box do not intersect");

    std::vector<Vector> out;
    if (cfg.mode == SamplerMode::Grid) {
        const Vector lo = cfg.grid_lo.size() ? cfg.grid_lo : space.lo2;
        const Vector hi = cfg.grid_hi.size() ? cfg.grid_hi : space.hi2;
        std::vector<int> idx(static_cast<std::size_t>(n2), 0);
        for (;;) {
            Vector p(n2);
            for (Index i = 0; i < n2; ++i) {
                const int s = cfg.grid_steps[static_cast<std::size_t>(i)];
                p[i] = s == 1 ? 0.5 * (lo[i] + hi[i])
                              : lo[i] + (hi[i] - lo[i]) * static_cast<double>(idx[std::size_t(i)]) /
                                            static_cast<double>(s - 1);
            }
            if (space.contains2(p, 0.0) && in_ball(p, center, space.ell2))
                out.push_back(p);
            Index d = 0;
            while (d < n2 && ++idx[std::size_t(d)] == cfg.grid_steps[std::size_t(d)]) {
                idx[std::size_t(d)] = 0;
                ++d;
            }
            if (d == n2)
                break;
        }
        if (out.empty())
            throw InvalidDataError("sample_xi2: no grid point lies in the feasible set");
        return out;
    }

    std::mt19937_64 rng(cfg.seed);
    const std::size_t max_attempts = 10000 * cfg.count + 10000;
    std::size_t attempts = 0;
    if (cfg.mode == SamplerMode::UniformBox) {
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        while (out.size() < cfg.count) {
            if (++attempts > max_attempts)
                throw InvalidDataError("sample_xi2: rejection sampling failed; ball/box overlap too small");
            Vector p(n2);
            for (Index i = 0; i < n2; ++i)
                p[i] = space.lo2[i] + (space.hi2[i] - space.lo2[i]) * u01(rng);
            if (in_ball(p, center, space.ell2))
                out.push_back(p);
        }
        return out;
    }

    const Vector mean = cfg.mean.size() ? cfg.mean : center;
    std::normal_distribution<double> n01(0.0, 1.0);
    while (out.size() < cfg.count) {
        if (++attempts > max_attempts)
            throw InvalidDataError("sample_xi2: rejection sampling failed; ball/box overlap too small");
        Vector p(n2);
        for (Index i = 0; i < n2; ++i) {
            // Truncated normal per component: redraw until it falls in the box.
            double v = mean[i];
            if (cfg.stddev[i] > 0.0) {
                int tries = 0;
                do {
                    v = mean[i] + cfg.stddev[i] * n01(rng);
                } while ((v < space.lo2[i] || v > space.hi2[i]) && ++tries < 1000);
            }
            p[i] = std::clamp(v, space.lo2[i], space.hi2[i]);
        }
        if (in_ball(p, center, space.ell2))
            out.push_back(p);
    }
    return out;
}

// -----------------------------------------------------------------------------
// Screening
// -----------------------------------------------------------------------------

namespace detail {

struct BatchEval {
    Matrix A;
    Vector b;
};

inline BatchEval batch_eval(const CanonicalModel &model, const Dataset &data, const Vector &xi2) {
    const Index rows = static_cast<Index>(data.size()) * model.output_dim();
    BatchEval e{Matrix(rows, model.space().n1()), Vector(rows)};
    model.evaluate(data.contexts, xi2, e.A, e.b);
    return e;
}

/// Mean over samples of ||A_k||_F^2 and ||b_k||^2.
inline std::pair<double, double> mean_sq_norms(const BatchEval &e, double N) {
    return {e.A.squaredNorm() / N, e.b.squaredNorm() / N};
}

} // namespace detail

struct FirstOrderRatios {
    double ratioA = 0.0;
    double ratioB = 0.0;
    bool b_degenerate = false;
    bool reduced_accuracy = false;
};

/// (||dA/dxi2|| ell2) / ||A|| and the b analog. Norms are RMS over samples
/// of per-sample Frobenius norms; derivatives by central differences on the
/// batch evaluation (one-sided next to a bound).
inline FirstOrderRatios screen_first_order(const CanonicalModel &model, const Dataset &data,
                                           const Vector &xi2p, double ell2) {
    const ParamSpace &sp = model.space();
    const double N = static_cast<double>(data.size());
    const auto base = detail::batch_eval(model, data, xi2p);
    FirstOrderRatios out;
    double dA2 = 0.0, db2 = 0.0;
    for (Index i = 0; i < sp.n2(); ++i) {
        const auto st = detail::fd_stencil(xi2p[i], sp.lo2[i], sp.hi2[i], detail::fd_step(xi2p[i]));
        out.reduced_accuracy |= st.one_sided;
        const double span = st.plus - st.minus;
        if (!(span > 0.0))
            continue;
        Vector xp = xi2p, xm = xi2p;
        xp[i] += st.plus;
        xm[i] += st.minus;
        const auto ep = detail::batch_eval(model, data, xp);
        const auto em = detail::batch_eval(model, data, xm);
        dA2 += (ep.A - em.A).squaredNorm() / (span * span);
        db2 += (ep.b - em.b).squaredNorm() / (span * span);
    }
    const double normA = std::sqrt(base.A.squaredNorm() / N);
    const double normB = std::sqrt(base.b.squaredNorm() / N);
    const double dA = std::sqrt(dA2 / N);
    const double db = std::sqrt(db2 / N);
    out.ratioA = (ell2 == 0.0 || dA == 0.0) ? 0.0 : dA * ell2 / normA;
    if (normB == 0.0) {
        out.ratioB = std::numeric_limits<double>::infinity();
        out.b_degenerate = true;
    } else {
        out.ratioB = (ell2 == 0.0 || db == 0.0) ? 0.0 : db * ell2 / normB;
    }
    return out;
}

struct SecondOrderResult {
    bool pdA = false;
    bool pdB = false;
    bool ok = true; ///< false when the stencil does not fit inside the box
    Matrix HA, Hb;
    std::string reason;
};

inline bool is_positive_definite(const Matrix &H) {
    if (H.size() == 0)
        return false;
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (H + H.transpose()), Eigen::EigenvaluesOnly);
    const double lmax = es.eigenvalues().maxCoeff();
    const double eps = 1e-8 * std::max(1.0, lmax);
    return (es.eigenvalues().array() > eps).all();
}

/// Central-difference Hessians of mean_k sum_ij A_k(i,j)^2 and mean_k ||b_k||^2.
inline SecondOrderResult screen_second_order(const CanonicalModel &model, const Dataset &data,
                                             const Vector &xi2p) {
    const ParamSpace &sp = model.space();
    const Index n2 = sp.n2();
    const double N = static_cast<double>(data.size());
    SecondOrderResult out;
    Vector h(n2);
    for (Index i = 0; i < n2; ++i) {
        h[i] = 1e-4 * std::max(1.0, std::abs(xi2p[i]));
        if (xi2p[i] - h[i] < sp.lo2[i] || xi2p[i] + h[i] > sp.hi2[i]) {
            out.ok = false;
            out.reason = "second-order stencil leaves the box in component " + std::to_string(i);
            return out;
        }
    }
    auto g = [&](const Vector &x) { return detail::mean_sq_norms(detail::batch_eval(model, data, x), N); };
    const auto g0 = g(xi2p);
    out.HA = Matrix::Zero(n2, n2);
    out.Hb = Matrix::Zero(n2, n2);
    for (Index i = 0; i < n2; ++i) {
        Vector xp = xi2p, xm = xi2p;
        xp[i] += h[i];
        xm[i] -= h[i];
        const auto gp = g(xp), gm = g(xm);
        out.HA(i, i) = (gp.first - 2.0 * g0.first + gm.first) / (h[i] * h[i]);
        out.Hb(i, i) = (gp.second - 2.0 * g0.second + gm.second) / (h[i] * h[i]);
        for (Index j = 0; j < i; ++j) {
            Vector pp = xi2p, pm = xi2p, mp = xi2p, mm = xi2p;
            pp[i] += h[i], pp[j] += h[j];
            pm[i] += h[i], pm[j] -= h[j];
            mp[i] -= h[i], mp[j] += h[j];
            mm[i] -= h[i], mm[j] -= h[j];
            const auto a = g(pp), b = g(pm), c = g(mp), d = g(mm);
            const double s = 4.0 * h[i] * h[j];
            out.HA(i, j) = out.HA(j, i) = (a.first - b.first - c.first + d.first) / s;
            out.Hb(i, j) = out.Hb(j, i) = (a.second - b.second - c.second + d.second) / s;
        }
    }
    out.pdA = is_positive_definite(out.HA);
    out.pdB = is_positive_definite(out.Hb);
    return out;
}

// -----------------------------------------------------------------------------
// Candidate evaluation and verdict
// -----------------------------------------------------------------------------

/// Linear solve at fixed xi2p: xi1p by OLS, R from its residuals, Tr[R].
inline CandidateRecord evaluate_candidate(const CanonicalModel &model, const Dataset &data,
                                          const Vector &xi2p) {
    CandidateRecord rec;
    rec.xi2p = xi2p;
    try {
        const StackedSystem sys = stack(model, data, xi2p);
        rec.xi1p = ols(sys);
        rec.Rdiag = residual_cov(sys.residuals(rec.xi1p));
        rec.traceR = trace_R(rec.Rdiag);
        rec.usable = true;
    } catch (const SingularSystemError &e) {
        rec.usable = false;
        rec.note = e.what();
    }
    return rec;
}

/// Screens and evaluates one candidate under the given config.
inline CandidateRecord screen_candidate(const CanonicalModel &model, const Dataset &data,
                                        const Vector &xi2p, const SamplerConfig &cfg) {
    const ParamSpace &sp = model.space();
    CandidateRecord rec = evaluate_candidate(model, data, xi2p);
    rec.in_ball = in_ball(xi2p, sp.nominal2(), sp.ell2);
    const auto fo = screen_first_order(model, data, xi2p, sp.ell2);
    rec.ratioA = fo.ratioA;
    rec.ratioB = fo.ratioB;
    rec.b_degenerate = fo.b_degenerate;
    const bool first_ok = rec.ratioA <= cfg.T1 && (rec.b_degenerate || rec.ratioB <= cfg.T2);
    bool second_ok = true;
    if (cfg.second_order != SecondOrderPolicy::Skip) {
        const auto so = screen_second_order(model, data, xi2p);
        rec.second_order_evaluated = so.ok;
        rec.pdA = so.pdA;
        rec.pdB = so.pdB;
        if (!so.ok)
            rec.note += (rec.note.empty() ? "" : "; ") + so.reason;
        if (cfg.second_order == SecondOrderPolicy::Enforce)
            second_ok = so.ok && so.pdA && (rec.b_degenerate || so.pdB);
    }
    rec.screened_ok = rec.usable && rec.in_ball && first_ok && second_ok;
    return rec;
}

struct UniquenessResult {
    Verdict verdict = Verdict::Flat;
    double diameter = 0.0;
    std::size_t near_minimal = 0;
};

/// Near-minimal set S = {traceR <= (1 + rho) min}; unique iff diam(S) <= tau ell2.
inline UniquenessResult uniqueness(const std::vector<CandidateRecord> &records, double rho,
                                   double tau, double ell2) {
    std::vector<const CandidateRecord *> usable;
    for (const auto &r : records)
        if (r.usable && r.screened_ok)
            usable.push_back(&r);
    if (usable.size() < 2)
        throw InvalidDataError("uniqueness: fewer than two usable candidates; increase the sample count");
    double tmin = std::numeric_limits<double>::infinity();
    for (const auto *r : usable)
        tmin = std::min(tmin, r->traceR);
    std::vector<const CandidateRecord *> S;
    for (const auto *r : usable)
        if (r->traceR <= (1.0 + rho) * tmin)
            S.push_back(r);
    UniquenessResult out;
    out.near_minimal = S.size();
    for (std::size_t i = 0; i < S.size(); ++i)
        for (std::size_t j = i + 1; j < S.size(); ++j)
            out.diameter = std::max(out.diameter, (S[i]->xi2p - S[j]->xi2p).norm());
    out.verdict = out.diameter <= tau * ell2 ? Verdict::UniqueMinimum : Verdict::Flat;
    return out;
}

/// Index of the minimum-trace screened record; near-ties go to the smallest ||xi2p||.
inline std::size_t select_warm_start(const std::vector<CandidateRecord> &records) {
    std::size_t best = records.size();
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto &r = records[i];
        if (!r.screened_ok || !r.usable)
            continue;
        if (best == records.size()) {
            best = i;
            continue;
        }
        const auto &b = records[best];
        const double tol = 1e-12 * std::max(std::abs(b.traceR), std::abs(r.traceR));
        if (r.traceR < b.traceR - tol ||
            (std::abs(r.traceR - b.traceR) <= tol && r.xi2p.norm() < b.xi2p.norm()))
            best = i;
    }
    return best;
}

inline Stage1Report run_stage1(const CanonicalModel &model, const Dataset &data,
                               const SamplerConfig &cfg) {
    const ParamSpace &sp = model.space();
    sp.validate();
    data.validate(model.output_dim(), 1);
    const auto candidates = sample_xi2(sp, cfg);

    Stage1Report rep;
    rep.ell2 = sp.ell2;
    rep.records.resize(candidates.size());
    parallel_for(candidates.size(), cfg.threads,
                 [&](std::size_t i) { rep.records[i] = screen_candidate(model, data, candidates[i], cfg); });

    rep.chosen = select_warm_start(rep.records);
    if (rep.chosen == rep.records.size()) {
        double minA = std::numeric_limits<double>::infinity();
        double minB = std::numeric_limits<double>::infinity();
        std::size_t usable = 0;
        for (const auto &r : rep.records) {
            minA = std::min(minA, r.ratioA);
            minB = std::min(minB, r.ratioB);
            usable += r.usable;
        }
        std::ostringstream msg;
        msg << "run_stage1: all " << rep.records.size() << " candidates screened out (" << usable
            << " usable; smallest ratioA " << minA << " vs T1 " << cfg.T1 << ", smallest ratioB "
            << minB << " vs T2 " << cfg.T2 << ")";
        throw EstimationError(msg.str());
    }
    rep.min_trace = rep.records[rep.chosen].traceR;
    const auto u = uniqueness(rep.records, cfg.rho, cfg.tau, sp.ell2);
    rep.verdict = u.verdict;
    rep.cluster_diameter = u.diameter;
    return rep;
}

} // namespace twostage
