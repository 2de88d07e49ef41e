// Canonical separable measurement model z_k = A(x_k, u_k, xi2) xi1 + b(x_k, u_k, xi2) + v_k
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace twostage {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Derivative of an m x n1 matrix with respect to each of the n2 nonlinear
/// parameters; slice i is dA/dxi2_i.
using MatrixSlices = std::vector<Matrix>;

// =============================================================================
// Errors
// =============================================================================

class EstimationError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class InvalidModelError : public EstimationError {
  public:
    using EstimationError::EstimationError;
};

class OutOfBoundsError : public EstimationError {
  public:
    using EstimationError::EstimationError;
};

class InvalidDataError : public EstimationError {
  public:
    using EstimationError::EstimationError;
};

class SingularSystemError : public EstimationError {
  public:
    SingularSystemError(const std::string &what, Index rank, double condition = 0.0)
        : EstimationError(what), rank_(rank), condition_(condition) {}
    Index rank() const { return rank_; }
    double condition() const { return condition_; }

  private:
    Index rank_;
    double condition_;
};

// =============================================================================
// Domain types
// =============================================================================

/// Parameter partition, box bounds and the norm radii used by the error bounds.
struct ParamSpace {
    std::vector<std::string> names1;
    std::vector<std::string> names2;
    Vector lo1, hi1;
    Vector lo2, hi2;
    double ell1 = 1.0; ///< bound on ||xi1||_2
    double ell2 = 1.0; ///< bound on ||xi2* - xi2p||_2
    Vector center2;    ///< nominal xi2 the sampling ball is centred on

    Index n1() const { return static_cast<Index>(names1.size()); }
    Index n2() const { return static_cast<Index>(names2.size()); }

    Vector lower() const {
        Vector lo(n1() + n2());
        lo << lo1, lo2;
        return lo;
    }
    Vector upper() const {
        Vector hi(n1() + n2());
        hi << hi1, hi2;
        return hi;
    }
    Vector nominal2() const { return center2.size() == n2() ? center2 : Vector::Zero(n2()); }

    void validate() const {
        if (lo1.size() != n1() || hi1.size() != n1() || lo2.size() != n2() || hi2.size() != n2())
            throw InvalidModelError("ParamSpace: bound vectors do not match name lists");
        if ((lo1.array() > hi1.array()).any() || (lo2.array() > hi2.array()).any())
            throw InvalidModelError("ParamSpace: lower bound exceeds upper bound");
        if (!(ell1 > 0.0) || !(ell2 > 0.0))
            throw InvalidModelError("ParamSpace: ell1 and ell2 must be positive");
        if (center2.size() != 0 && center2.size() != n2())
            throw InvalidModelError("ParamSpace: center2 has wrong length");
    }

    bool contains1(const Vector &xi1, double tol = 1e-12) const {
        return xi1.size() == n1() && (xi1.array() >= lo1.array() - tol).all() &&
               (xi1.array() <= hi1.array() + tol).all();
    }
    bool contains2(const Vector &xi2, double tol = 1e-12) const {
        return xi2.size() == n2() && (xi2.array() >= lo2.array() - tol).all() &&
               (xi2.array() <= hi2.array() + tol).all();
    }
};

/// Known state and input at one sample time.
struct SampleContext {
    Vector x;
    Vector u;
};

/// Ordered samples (x_k, u_k, z_k).
struct Dataset {
    std::vector<SampleContext> contexts;
    std::vector<Vector> z;

    std::size_t size() const { return z.size(); }
    Index m() const { return z.empty() ? 0 : z.front().size(); }

    /// Row-stacked measurements Z (N*m).
    Vector stacked_z() const {
        const Index mm = m();
        Vector out(static_cast<Index>(size()) * mm);
        for (std::size_t k = 0; k < size(); ++k)
            out.segment(static_cast<Index>(k) * mm, mm) = z[k];
        return out;
    }

    void validate(Index expected_m, Index min_samples) const {
        if (contexts.size() != z.size())
            throw InvalidDataError("Dataset: context and measurement counts differ");
        if (z.empty())
            throw InvalidDataError("Dataset: empty");
        if (static_cast<Index>(z.size()) < min_samples)
            throw InvalidDataError("Dataset: fewer samples than parameters (N=" +
                                   std::to_string(z.size()) + ", need " +
                                   std::to_string(min_samples) + ")");
        for (std::size_t k = 0; k < z.size(); ++k)
            if (z[k].size() != expected_m)
                throw InvalidDataError("Dataset: sample " + std::to_string(k) +
                                       " has wrong measurement dimension");
    }
};

/// Diagonal noise covariance.
struct DiagCov {
    Vector r;
    bool floored = false; ///< at least one channel hit the variance floor

    static DiagCov identity(Index m) { return DiagCov{Vector::Ones(m), false}; }

    void validate() const {
        if (r.size() == 0 || !(r.array() > 0.0).all() || !r.allFinite())
            throw InvalidDataError("DiagCov: variances must be positive and finite");
    }
};

// =============================================================================
// Model interface
// =============================================================================

/// A problem instance in canonical separable form. Implementations are
/// immutable after construction and safe to share between threads.
class CanonicalModel {
  public:
    virtual ~CanonicalModel() = default;

    virtual std::string id() const = 0;
    virtual const ParamSpace &space() const = 0;
    virtual Index output_dim() const = 0;
    virtual Index state_dim() const = 0;
    virtual Index input_dim() const = 0;

    /// Writes A (m x n1) and b (m) for one sample.
    virtual void eval_into(const SampleContext &ctx, const Vector &xi2, Eigen::Ref<Matrix> A,
                           Eigen::Ref<Vector> b) const = 0;

    /// Analytic dA/dxi2 and db/dxi2 (m x n2) if the model provides them.
    virtual std::optional<MatrixSlices> analytic_dA(const SampleContext &, const Vector &) const {
        return std::nullopt;
    }
    virtual std::optional<Matrix> analytic_db(const SampleContext &, const Vector &) const {
        return std::nullopt;
    }

    /// Fills the row-stacked (N*m x n1) A and (N*m) b for a sequence of
    /// samples. Models whose samples are coupled (integrated trajectories)
    /// override this.
    virtual void evaluate(std::span<const SampleContext> contexts, const Vector &xi2,
                          Eigen::Ref<Matrix> A_big, Eigen::Ref<Vector> b_big) const {
        const Index m = output_dim();
        for (std::size_t k = 0; k < contexts.size(); ++k) {
            const Index row = static_cast<Index>(k) * m;
            eval_into(contexts[k], xi2, A_big.middleRows(row, m), b_big.segment(row, m));
        }
    }

    Matrix eval_A(const SampleContext &ctx, const Vector &xi2) const {
        Matrix A(output_dim(), space().n1());
        Vector b(output_dim());
        eval_into(ctx, xi2, A, b);
        return A;
    }
    Vector eval_b(const SampleContext &ctx, const Vector &xi2) const {
        Matrix A(output_dim(), space().n1());
        Vector b(output_dim());
        eval_into(ctx, xi2, A, b);
        return b;
    }
};

// =============================================================================
// Operations
// =============================================================================

inline void check_context(const CanonicalModel &model, const SampleContext &ctx) {
    if (ctx.x.size() != model.state_dim() || ctx.u.size() != model.input_dim())
        throw InvalidModelError("context dimensions do not match model '" + model.id() + "'");
}

/// Noise-free prediction A(xi2) xi1 + b(xi2).
inline Vector predict(const CanonicalModel &model, const SampleContext &ctx, const Vector &xi1,
                      const Vector &xi2) {
    const ParamSpace &sp = model.space();
    if (xi1.size() != sp.n1() || xi2.size() != sp.n2())
        throw InvalidModelError("predict: parameter vector sizes do not match model '" +
                                model.id() + "'");
    check_context(model, ctx);
    if (!sp.contains1(xi1) || !sp.contains2(xi2))
        throw OutOfBoundsError("predict: parameters outside box bounds");
    Matrix A(model.output_dim(), sp.n1());
    Vector b(model.output_dim());
    model.eval_into(ctx, xi2, A, b);
    if (A.rows() != model.output_dim() || A.cols() != sp.n1())
        throw InvalidModelError("predict: model returned wrong shape");
    return A * xi1 + b;
}

struct FdJacobianA {
    MatrixSlices d;
    bool reduced_accuracy = false;
};

struct FdJacobianB {
    Matrix d; ///< m x n2
    bool reduced_accuracy = false;
};

namespace detail {

/// Per-component finite-difference stencil that stays inside [lo, hi].
struct FdStencil {
    double plus = 0.0;  ///< offset for the upper point
    double minus = 0.0; ///< offset for the lower point (non-positive)
    bool one_sided = false;
};

inline FdStencil fd_stencil(double x, double lo, double hi, double h) {
    FdStencil s;
    const bool up = x + h <= hi;
    const bool down = x - h >= lo;
    if (up && down) {
        s.plus = h;
        s.minus = -h;
    } else if (up) {
        s.plus = h;
        s.one_sided = true;
    } else if (down) {
        s.minus = -h;
        s.one_sided = true;
    } else {
        // Box narrower than the step: use whatever room exists.
        s.plus = hi - x;
        s.minus = lo - x;
        s.one_sided = true;
    }
    return s;
}

inline double fd_step(double x) { return std::max(1e-6, 1e-6 * std::abs(x)); }

} // namespace detail

/// Central-difference dA/dxi2 for one sample; shrinks to one-sided near a bound.
inline FdJacobianA fd_jacobian_A(const CanonicalModel &model, const SampleContext &ctx,
                                 const Vector &xi2) {
    const ParamSpace &sp = model.space();
    const Index m = model.output_dim();
    FdJacobianA out;
    Matrix Ap(m, sp.n1()), Am(m, sp.n1());
    Vector bp(m), bm(m);
    for (Index i = 0; i < sp.n2(); ++i) {
        const auto st = detail::fd_stencil(xi2[i], sp.lo2[i], sp.hi2[i], detail::fd_step(xi2[i]));
        out.reduced_accuracy |= st.one_sided;
        Vector xp = xi2, xm = xi2;
        xp[i] += st.plus;
        xm[i] += st.minus;
        model.eval_into(ctx, xp, Ap, bp);
        model.eval_into(ctx, xm, Am, bm);
        const double span = st.plus - st.minus;
        out.d.push_back(span > 0.0 ? Matrix((Ap - Am) / span) : Matrix::Zero(m, sp.n1()));
    }
    return out;
}

/// Central-difference db/dxi2 (m x n2) for one sample.
inline FdJacobianB fd_jacobian_b(const CanonicalModel &model, const SampleContext &ctx,
                                 const Vector &xi2) {
    const ParamSpace &sp = model.space();
    const Index m = model.output_dim();
    FdJacobianB out;
    out.d = Matrix::Zero(m, sp.n2());
    Matrix Ap(m, sp.n1()), Am(m, sp.n1());
    Vector bp(m), bm(m);
    for (Index i = 0; i < sp.n2(); ++i) {
        const auto st = detail::fd_stencil(xi2[i], sp.lo2[i], sp.hi2[i], detail::fd_step(xi2[i]));
        out.reduced_accuracy |= st.one_sided;
        Vector xp = xi2, xm = xi2;
        xp[i] += st.plus;
        xm[i] += st.minus;
        model.eval_into(ctx, xp, Ap, bp);
        model.eval_into(ctx, xm, Am, bm);
        const double span = st.plus - st.minus;
        if (span > 0.0)
            out.d.col(i) = (bp - bm) / span;
    }
    return out;
}

/// Analytic derivative when registered, finite differences otherwise.
inline MatrixSlices jacobian_A(const CanonicalModel &model, const SampleContext &ctx,
                               const Vector &xi2) {
    if (auto d = model.analytic_dA(ctx, xi2))
        return *d;
    return fd_jacobian_A(model, ctx, xi2).d;
}

inline Matrix jacobian_b(const CanonicalModel &model, const SampleContext &ctx, const Vector &xi2) {
    if (auto d = model.analytic_db(ctx, xi2))
        return *d;
    return fd_jacobian_b(model, ctx, xi2).d;
}

} // namespace twostage
