// The two scalar tutorial problems.
//   scalar1: z = (1 + a) cos(eta + b) + c
//   scalar2: z = (1 + a) cos(eta (1 + b) + c) + d
#pragma once

#include "../canon.hpp"

#include <cmath>
#include <utility>

namespace twostage::models {

/// Equally spaced abscissae from `first` to `last`.
inline Vector linspace(double first, double last, Index n) {
    Vector out(n);
    for (Index k = 0; k < n; ++k)
        out[k] = n == 1 ? first : first + (last - first) * static_cast<double>(k) / static_cast<double>(n - 1);
    return out;
}

/// Contexts with x = [eta_k] and no inputs.
inline std::vector<SampleContext> eta_contexts(const Vector &eta) {
    std::vector<SampleContext> ctx(static_cast<std::size_t>(eta.size()));
    for (Index k = 0; k < eta.size(); ++k)
        ctx[static_cast<std::size_t>(k)] = SampleContext{Vector::Constant(1, eta[k]), Vector(0)};
    return ctx;
}

class Scalar1Model final : public CanonicalModel {
  public:
    Scalar1Model() : Scalar1Model(default_space()) {}
    explicit Scalar1Model(ParamSpace space) : space_(std::move(space)) { space_.validate(); }

    static ParamSpace default_space() {
        ParamSpace sp;
        sp.names1 = {"a", "c"};
        sp.names2 = {"b"};
        sp.lo1 = Vector::Constant(2, -10.0);
        sp.hi1 = Vector::Constant(2, 10.0);
        sp.lo2 = Vector::Constant(1, 0.0);
        sp.hi2 = Vector::Constant(1, 0.2);
        sp.ell1 = 2.0;
        sp.ell2 = 0.2;
        sp.center2 = Vector::Zero(1);
        return sp;
    }

    std::string id() const override { return "scalar1"; }
    const ParamSpace &space() const override { return space_; }
    Index output_dim() const override { return 1; }
    Index state_dim() const override { return 1; }
    Index input_dim() const override { return 0; }

    void eval_into(const SampleContext &ctx, const Vector &xi2, Eigen::Ref<Matrix> A,
                   Eigen::Ref<Vector> b) const override {
        const double c = std::cos(ctx.x[0] + xi2[0]);
        A(0, 0) = c;
        A(0, 1) = 1.0;
        b[0] = c;
    }

    std::optional<MatrixSlices> analytic_dA(const SampleContext &ctx, const Vector &xi2) const override {
        Matrix d = Matrix::Zero(1, 2);
        d(0, 0) = -std::sin(ctx.x[0] + xi2[0]);
        return MatrixSlices{d};
    }
    std::optional<Matrix> analytic_db(const SampleContext &ctx, const Vector &xi2) const override {
        return Matrix::Constant(1, 1, -std::sin(ctx.x[0] + xi2[0]));
    }

  private:
    ParamSpace space_;
};

class Scalar2Model final : public CanonicalModel {
  public:
    Scalar2Model() : Scalar2Model(default_space()) {}
    explicit Scalar2Model(ParamSpace space) : space_(std::move(space)) { space_.validate(); }

    static ParamSpace default_space() {
        ParamSpace sp;
        sp.names1 = {"a", "d"};
        sp.names2 = {"b", "c"};
        sp.lo1 = Vector::Constant(2, -10.0);
        sp.hi1 = Vector::Constant(2, 10.0);
        sp.lo2 = Vector::Zero(2);
        sp.hi2 = (Vector(2) << 0.5, 1.0).finished();
        sp.ell1 = 2.0;
        sp.ell2 = 1.2;
        sp.center2 = Vector::Zero(2);
        return sp;
    }

    std::string id() const override { return "scalar2"; }
    const ParamSpace &space() const override { return space_; }
    Index output_dim() const override { return 1; }
    Index state_dim() const override { return 1; }
    Index input_dim() const override { return 0; }

    void eval_into(const SampleContext &ctx, const Vector &xi2, Eigen::Ref<Matrix> A,
                   Eigen::Ref<Vector> b) const override {
        const double c = std::cos(ctx.x[0] * (1.0 + xi2[0]) + xi2[1]);
        A(0, 0) = c;
        A(0, 1) = 1.0;
        b[0] = c;
    }

    std::optional<MatrixSlices> analytic_dA(const SampleContext &ctx, const Vector &xi2) const override {
        const double eta = ctx.x[0];
        const double s = std::sin(eta * (1.0 + xi2[0]) + xi2[1]);
        Matrix db = Matrix::Zero(1, 2), dc = Matrix::Zero(1, 2);
        db(0, 0) = -eta * s;
        dc(0, 0) = -s;
        return MatrixSlices{db, dc};
    }
    std::optional<Matrix> analytic_db(const SampleContext &ctx, const Vector &xi2) const override {
        const double eta = ctx.x[0];
        const double s = std::sin(eta * (1.0 + xi2[0]) + xi2[1]);
        Matrix d(1, 2);
        d << -eta * s, -s;
        return d;
    }

  private:
    ParamSpace space_;
};

} // namespace twostage::models
