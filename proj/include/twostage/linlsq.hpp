// Stacked ordinary / weighted linear least squares and residual covariance.
#pragma once

#include "canon.hpp"

#include <algorithm>
#include <string>

namespace twostage {

/// Relative pivot threshold below which a column is treated as dependent.
inline constexpr double kRankTolerance = 1e-10;
/// Variance floor for channels with (numerically) zero residual.
inline constexpr double kVarianceFloor = 1e-12;

/// Row-stacked system: block k of A_big is A(ctx_k, xi2).
struct StackedSystem {
    Matrix A_big;
    Vector b_big;
    Vector z_big;
    Index m = 0;

    Index samples() const { return m == 0 ? 0 : A_big.rows() / m; }
    /// Z - B
    Vector rhs() const { return z_big - b_big; }
    /// Per-sample residuals z_k - A_k xi1 - b_k as an N x m matrix.
    Matrix residuals(const Vector &xi1) const {
        Vector v = z_big - b_big - A_big * xi1;
        return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                              Eigen::RowMajor>>(v.data(), samples(), m);
    }
};

inline StackedSystem stack(const CanonicalModel &model, const Dataset &data, const Vector &xi2) {
    if (data.size() == 0)
        throw InvalidDataError("stack: empty dataset");
    if (xi2.size() != model.space().n2())
        throw InvalidModelError("stack: xi2 has wrong length");
    const Index m = model.output_dim();
    const Index rows = static_cast<Index>(data.size()) * m;
    StackedSystem sys;
    sys.m = m;
    sys.A_big.resize(rows, model.space().n1());
    sys.b_big.resize(rows);
    model.evaluate(data.contexts, xi2, sys.A_big, sys.b_big);
    sys.z_big = data.stacked_z();
    if (sys.z_big.size() != rows)
        throw InvalidDataError("stack: measurement dimension does not match model");
    if (!sys.A_big.allFinite() || !sys.b_big.allFinite()) {
        for (Index r = 0; r < rows; ++r)
            if (!sys.A_big.row(r).allFinite() || !std::isfinite(sys.b_big[r]))
                throw InvalidModelError("stack: non-finite model output at sample " +
                                        std::to_string(r / m));
    }
    return sys;
}

/// argmin ||y - A x||^2 by column-pivoted QR; throws on rank deficiency.
inline Vector solve_least_squares(const Matrix &A, const Vector &y) {
    if (A.rows() < A.cols())
        throw SingularSystemError("least squares: fewer rows than unknowns", A.rows());
    Eigen::ColPivHouseholderQR<Matrix> qr(A);
    qr.setThreshold(kRankTolerance);
    if (qr.rank() < A.cols())
        throw SingularSystemError("least squares: rank-deficient design matrix (rank " +
                                      std::to_string(qr.rank()) + " of " +
                                      std::to_string(A.cols()) + ")",
                                  qr.rank());
    return qr.solve(y);
}

inline Vector ols(const StackedSystem &sys) { return solve_least_squares(sys.A_big, sys.rhs()); }

/// Row-weighted solve with weights R^-1 repeated per sample.
inline Vector wls(const StackedSystem &sys, const DiagCov &R) {
    R.validate();
    if (R.r.size() != sys.m)
        throw InvalidDataError("wls: covariance dimension does not match system");
    const Index rows = sys.A_big.rows();
    Vector w(rows);
    const Vector inv_sd = R.r.cwiseSqrt().cwiseInverse();
    for (Index k = 0; k < sys.samples(); ++k)
        w.segment(k * sys.m, sys.m) = inv_sd;
    Matrix Aw = w.asDiagonal() * sys.A_big;
    Vector yw = w.cwiseProduct(sys.rhs());
    return solve_least_squares(Aw, yw);
}

/// ML diagonal covariance r_j = mean_k v_kj^2, floored at kVarianceFloor.
inline DiagCov residual_cov(const Matrix &residuals) {
    if (residuals.rows() == 0)
        throw InvalidDataError("residual_cov: no residuals");
    DiagCov out;
    out.r = residuals.colwise().squaredNorm().transpose() / static_cast<double>(residuals.rows());
    for (Index j = 0; j < out.r.size(); ++j) {
        if (!(out.r[j] > kVarianceFloor)) {
            out.r[j] = kVarianceFloor;
            out.floored = true;
        }
    }
    return out;
}

inline double trace_R(const DiagCov &R) { return R.r.sum(); }

} // namespace twostage
