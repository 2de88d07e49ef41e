// Three-axis magnetometer calibration: h_m = C_alpha C_eta (I + diag(lambda)) h_b + n.
//
// Context: x = h_b (true field in body axes), no inputs.
// xi1 = [lambda_x, lambda_y, lambda_z, n_x, n_y, n_z]
// xi2 = [alpha_xy, alpha_xz, alpha_yz, eta_x, eta_y, eta_z]
//
// C_alpha = I + S with S symmetric and zero-diagonal (soft iron), C_eta = I + [eta]x
// (small-angle misalignment). A general soft-iron matrix would make the model
// over-parametrized; see the README.
#pragma once

#include "../canon.hpp"
#include "kinematics.hpp"

#include <utility>

namespace twostage::models {

inline Mat3 soft_iron_matrix(double axy, double axz, double ayz) {
    Mat3 C;
    C << 1.0, axy, axz,
         axy, 1.0, ayz,
         axz, ayz, 1.0;
    return C;
}

inline Mat3 small_angle_misalignment(const Vec3 &eta) { return Mat3::Identity() + skew(eta); }

struct MagBlocks {
    Matrix A; ///< 3 x 6
    Vector b; ///< 3
};

/// A = [C_alpha C_eta diag(h_b) | I3], b = C_alpha C_eta h_b.
inline MagBlocks mag_build(const Vec3 &hb, const Vector &xi2) {
    const Mat3 M = soft_iron_matrix(xi2[0], xi2[1], xi2[2]) *
                   small_angle_misalignment(Vec3(xi2[3], xi2[4], xi2[5]));
    MagBlocks out{Matrix(3, 6), Vector(3)};
    out.A.leftCols(3) = M * hb.asDiagonal();
    out.A.rightCols(3).setIdentity();
    out.b = M * hb;
    return out;
}

class MagModel final : public CanonicalModel {
  public:
    MagModel() : MagModel(default_space()) {}
    explicit MagModel(ParamSpace space) : space_(std::move(space)) { space_.validate(); }

    static ParamSpace default_space() {
        ParamSpace sp;
        sp.names1 = {"lambda_x", "lambda_y", "lambda_z", "n_x", "n_y", "n_z"};
        sp.names2 = {"alpha_xy", "alpha_xz", "alpha_yz", "eta_x", "eta_y", "eta_z"};
        sp.lo1 = (Vector(6) << -0.5, -0.5, -0.5, -1.0, -1.0, -1.0).finished();
        sp.hi1 = -sp.lo1;
        sp.lo2 = Vector::Constant(6, -0.2);
        sp.hi2 = Vector::Constant(6, 0.2);
        sp.ell1 = 1.5;
        sp.ell2 = 0.5;
        sp.center2 = Vector::Zero(6);
        return sp;
    }

    std::string id() const override { return "magnetometer"; }
    const ParamSpace &space() const override { return space_; }
    Index output_dim() const override { return 3; }
    Index state_dim() const override { return 3; }
    Index input_dim() const override { return 0; }

    void eval_into(const SampleContext &ctx, const Vector &xi2, Eigen::Ref<Matrix> A,
                   Eigen::Ref<Vector> b) const override {
        const MagBlocks m = mag_build(Vec3(ctx.x[0], ctx.x[1], ctx.x[2]), xi2);
        A = m.A;
        b = m.b;
    }

  private:
    ParamSpace space_;
};

} // namespace twostage::models
