// Five-hole probe calibration against a navigation solution.
//
// Context: x = [p, q, r, b_p, b_q, b_r, phi, theta, psi] (rad/s, rad),
//          u = [P_dalpha, P_dbeta, P_t, P_s] (Pa).
// Output:  z = inertial velocity in NED (m/s).
// xi1 = [lambda_Va, b_Va, W_N, W_E, W_D], xi2 = [lambda_alpha, b_alpha, lambda_beta, b_beta, eps_phi].
#pragma once

#include "../canon.hpp"
#include "kinematics.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>

namespace twostage::models {

struct PitotConstants {
    double rho = 1.225;    ///< air density, kg/m^3
    double K_alpha = 0.0833;
    double K_beta = 0.0833;
    Vec3 r{0.2, 0.0, 0.0}; ///< probe offset from the IMU in body axes, m
};

struct AirData {
    double V_raw = 0.0; ///< uncalibrated airspeed
    double alpha = 0.0;
    double beta = 0.0;
    double ratio_alpha = 0.0; ///< P_dalpha / (K_alpha (P_t - P_s))
    double ratio_beta = 0.0;
};

/// Air-data error model: raw airspeed and calibrated flow angles.
inline AirData pitot_airdata(const Vector &u, const Vector &xi2, const PitotConstants &k) {
    const double dp = u[2] - u[3];
    if (!(dp > 0.0))
        throw InvalidDataError("pitot: total pressure must exceed static pressure");
    if (!(k.rho > 0.0) || k.K_alpha == 0.0 || k.K_beta == 0.0)
        throw InvalidModelError("pitot: rho must be positive and K_alpha, K_beta non-zero");
    AirData a;
    a.V_raw = std::sqrt(2.0 * dp / k.rho);
    a.ratio_alpha = u[0] / (k.K_alpha * dp);
    a.ratio_beta = u[1] / (k.K_beta * dp);
    a.alpha = (1.0 + xi2[0]) * a.ratio_alpha + xi2[1];
    a.beta = (1.0 + xi2[2]) * a.ratio_beta + xi2[3];
    return a;
}

/// Unit flow direction in probe axes.
inline Vec3 flow_direction(double alpha, double beta) {
    return {std::cos(alpha) * std::cos(beta), std::sin(beta), std::sin(alpha) * std::cos(beta)};
}

class PitotModel final : public CanonicalModel {
  public:
    explicit PitotModel(PitotConstants k = {}) : PitotModel(default_space(), k) {}
    PitotModel(ParamSpace space, PitotConstants k) : space_(std::move(space)), k_(k) { space_.validate(); }

    static ParamSpace default_space() {
        constexpr double deg = std::numbers::pi / 180.0;
        ParamSpace sp;
        sp.names1 = {"lambda_Va", "b_Va", "W_N", "W_E", "W_D"};
        sp.names2 = {"lambda_alpha", "b_alpha", "lambda_beta", "b_beta", "eps_phi"};
        sp.lo1 = (Vector(5) << -0.5, -5.0, -6.0, -6.0, -2.0).finished();
        sp.hi1 = -sp.lo1;
        sp.lo2 = (Vector(5) << -0.5, -5.0 * deg, -0.5, -5.0 * deg, -0.2618).finished();
        sp.hi2 = -sp.lo2;
        sp.ell1 = 8.0;
        sp.ell2 = 0.8;
        sp.center2 = Vector::Zero(5);
        return sp;
    }

    const PitotConstants &constants() const { return k_; }

    std::string id() const override { return "pitot"; }
    const ParamSpace &space() const override { return space_; }
    Index output_dim() const override { return 3; }
    Index state_dim() const override { return 9; }
    Index input_dim() const override { return 4; }

    void eval_into(const SampleContext &ctx, const Vector &xi2, Eigen::Ref<Matrix> A,
                   Eigen::Ref<Vector> b) const override {
        const Parts p = parts(ctx, xi2);
        const Vec3 F = p.Cnb * p.Ceps * p.dir;
        A.col(0) = F * p.air.V_raw;
        A.col(1) = F;
        A.rightCols(3).setIdentity();
        b = F * p.air.V_raw - p.Cnb * p.omega.cross(k_.r);
    }

    std::optional<MatrixSlices> analytic_dA(const SampleContext &ctx, const Vector &xi2) const override {
        const auto dF = dF_dxi2(ctx, xi2);
        const double V = pitot_airdata(ctx.u, xi2, k_).V_raw;
        MatrixSlices out;
        for (const Vec3 &d : dF) {
            Matrix s = Matrix::Zero(3, 5);
            s.col(0) = d * V;
            s.col(1) = d;
            out.push_back(s);
        }
        return out;
    }

    std::optional<Matrix> analytic_db(const SampleContext &ctx, const Vector &xi2) const override {
        const auto dF = dF_dxi2(ctx, xi2);
        const double V = pitot_airdata(ctx.u, xi2, k_).V_raw;
        Matrix out(3, 5);
        for (int i = 0; i < 5; ++i)
            out.col(i) = dF[static_cast<std::size_t>(i)] * V;
        return out;
    }

  private:
    struct Parts {
        AirData air;
        Mat3 Cnb, Ceps;
        Vec3 dir, omega;
    };

    Parts parts(const SampleContext &ctx, const Vector &xi2) const {
        Parts p;
        p.air = pitot_airdata(ctx.u, xi2, k_);
        p.Cnb = dcm_body_to_ned(ctx.x[6], ctx.x[7], ctx.x[8]);
        p.Ceps = misalignment_dcm(xi2[4]);
        p.dir = flow_direction(p.air.alpha, p.air.beta);
        p.omega = Vec3(ctx.x[0] - ctx.x[3], ctx.x[1] - ctx.x[4], ctx.x[2] - ctx.x[5]);
        return p;
    }

    std::array<Vec3, 5> dF_dxi2(const SampleContext &ctx, const Vector &xi2) const {
        const Parts p = parts(ctx, xi2);
        const double sa = std::sin(p.air.alpha), ca = std::cos(p.air.alpha);
        const double sb = std::sin(p.air.beta), cb = std::cos(p.air.beta);
        const Vec3 d_alpha(-sa * cb, 0.0, ca * cb);
        const Vec3 d_beta(-ca * sb, cb, -sa * sb);
        const double se = std::sin(xi2[4]), ce = std::cos(xi2[4]);
        Mat3 dC;
        dC << 0.0, 0.0, 0.0,
              0.0, -se, ce,
              0.0, -ce, -se;
        const Mat3 T = p.Cnb * p.Ceps;
        return {T * d_alpha * p.air.ratio_alpha, T * d_alpha, T * d_beta * p.air.ratio_beta, T * d_beta,
                p.Cnb * dC * p.dir};
    }

    ParamSpace space_;
    PitotConstants k_;
};

} // namespace twostage::models
