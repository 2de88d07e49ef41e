// Aircraft data compatibility: airspeed, flow angles and Euler angles are
// reconstructed by integrating bias-corrected accelerometer and gyro
// measurements through the rigid-body kinematics.
//
// Context: x = [t_k] (s), u = measured [a_x, a_y, a_z, p, q, r] at t_k.
// Output:  z = [V, beta, alpha, phi, theta, psi].
// xi1 = [lambda_V, b_V, lambda_beta, b_beta, lambda_alpha, b_alpha,
//        lambda_phi, b_phi, lambda_theta, b_theta, lambda_psi, b_psi]
// xi2 = [b_ax, b_ay, b_az, b_p, b_q, b_r]
//
// Samples are coupled through the integration, so the model carries the
// complete measured input history and the known initial state.
#pragma once

#include "../canon.hpp"
#include "kinematics.hpp"

#include <cmath>
#include <utility>
#include <vector>

namespace twostage::models {

using Vec6 = Eigen::Matrix<double, 6, 1>;

struct AirDataAngles {
    double V = 0.0;
    double beta = 0.0;
    double alpha = 0.0;
};

/// Airspeed and flow angles from body-axis velocity.
inline AirDataAngles datacompat_airdata(double u, double v, double w) {
    if (u == 0.0)
        throw InvalidDataError("datacompat: u = 0 leaves the angle of attack undefined");
    const double V = std::sqrt(u * u + v * v + w * w);
    if (!(V > 0.0))
        throw InvalidDataError("datacompat: zero airspeed");
    return {V, std::asin(v / V), std::atan(w / u)};
}

/// State derivative for s = [u, v, w, phi, theta, psi] given corrected
/// inputs [a_x, a_y, a_z, p, q, r].
inline Vec6 kinematics_rhs(const Vec6 &s, const Vec6 &in, double g) {
    const double p = in[3], q = in[4], r = in[5];
    const double sf = std::sin(s[3]), cf = std::cos(s[3]);
    const double st = std::sin(s[4]), ct = std::cos(s[4]);
    Vec6 d;
    d[0] = r * s[1] - q * s[2] - g * st + in[0];
    d[1] = -r * s[0] + p * s[2] + g * sf * ct + in[1];
    d[2] = q * s[0] - p * s[1] + g * cf * ct + in[2];
    d.tail<3>() = euler_rate_matrix(s[3], s[4]) * Vec3(p, q, r);
    return d;
}

/// Classical fourth-order Runge-Kutta over K samples spaced dt apart;
/// `input(t)` returns the corrected inputs at time t.
template <typename InputFn>
std::vector<Vec6> rk4_integrate(const Vec6 &x0, double dt, std::size_t K, InputFn &&input, double g) {
    std::vector<Vec6> out;
    out.reserve(K);
    Vec6 s = x0;
    for (std::size_t k = 0; k < K; ++k) {
        out.push_back(s);
        if (k + 1 == K)
            break;
        const double t = static_cast<double>(k) * dt;
        const Vec6 u0 = input(t), um = input(t + 0.5 * dt), u1 = input(t + dt);
        const Vec6 k1 = kinematics_rhs(s, u0, g);
        const Vec6 k2 = kinematics_rhs(s + 0.5 * dt * k1, um, g);
        const Vec6 k3 = kinematics_rhs(s + 0.5 * dt * k2, um, g);
        const Vec6 k4 = kinematics_rhs(s + dt * k3, u1, g);
        s += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return out;
}

struct DataCompatSetup {
    double dt = 0.02; ///< 50 Hz
    double g = 9.80665;
    Vec6 x0 = Vec6::Zero(); ///< known initial [u, v, w, phi, theta, psi]
};

class DataCompatModel final : public CanonicalModel {
  public:
    /// `inputs[k]` is the measured input vector at t_k = k dt.
    DataCompatModel(DataCompatSetup setup, std::vector<Vec6> inputs)
        : DataCompatModel(default_space(), setup, std::move(inputs)) {}
    DataCompatModel(ParamSpace space, DataCompatSetup setup, std::vector<Vec6> inputs)
        : space_(std::move(space)), setup_(setup), inputs_(std::move(inputs)) {
        space_.validate();
        if (inputs_.empty())
            throw InvalidModelError("datacompat: empty input history");
        if (!(setup_.dt > 0.0))
            throw InvalidModelError("datacompat: dt must be positive");
    }

    /// Builds the model from a dataset whose contexts carry the measured inputs.
    static DataCompatModel from_contexts(const std::vector<SampleContext> &ctx, DataCompatSetup setup,
                                         ParamSpace space = default_space()) {
        std::vector<Vec6> in;
        in.reserve(ctx.size());
        for (std::size_t k = 0; k < ctx.size(); ++k) {
            if (ctx[k].u.size() != 6 || ctx[k].x.size() != 1)
                throw InvalidDataError("datacompat: context " + std::to_string(k) + " has wrong shape");
            if (std::abs(ctx[k].x[0] - static_cast<double>(k) * setup.dt) > 1e-6 * setup.dt + 1e-9)
                throw InvalidDataError("datacompat: sample " + std::to_string(k) +
                                       " is not on the uniform time grid");
            in.emplace_back(ctx[k].u);
        }
        return DataCompatModel(std::move(space), setup, std::move(in));
    }

    static ParamSpace default_space() {
        ParamSpace sp;
        sp.names1 = {"lambda_V", "b_V", "lambda_beta", "b_beta", "lambda_alpha", "b_alpha",
                     "lambda_phi", "b_phi", "lambda_theta", "b_theta", "lambda_psi", "b_psi"};
        sp.names2 = {"b_ax", "b_ay", "b_az", "b_p", "b_q", "b_r"};
        sp.lo1 = (Vector(12) << -0.5, -5.0, -0.5, -0.1, -0.5, -0.1, -0.5, -0.1, -0.5, -0.1, -0.5, -0.1)
                     .finished();
        sp.hi1 = -sp.lo1;
        sp.lo2 = (Vector(6) << -0.5, -0.5, -0.5, -0.05, -0.05, -0.05).finished();
        sp.hi2 = -sp.lo2;
        sp.ell1 = 2.0;
        sp.ell2 = 0.9;
        sp.center2 = Vector::Zero(6);
        return sp;
    }

    const DataCompatSetup &setup() const { return setup_; }
    const std::vector<Vec6> &inputs() const { return inputs_; }

    std::string id() const override { return "datacompat"; }
    const ParamSpace &space() const override { return space_; }
    Index output_dim() const override { return 6; }
    Index state_dim() const override { return 1; }
    Index input_dim() const override { return 6; }

    /// Integrated states at every input sample for the given biases.
    std::vector<Vec6> states(const Vector &xi2, std::size_t K) const {
        const Vec6 bias = xi2;
        const double dt = setup_.dt;
        auto input = [&](double t) -> Vec6 {
            const double pos = t / dt;
            const std::size_t i = std::min(static_cast<std::size_t>(pos), inputs_.size() - 1);
            const double f = pos - static_cast<double>(i);
            if (i + 1 >= inputs_.size() || f <= 0.0)
                return inputs_[i] + bias;
            return (1.0 - f) * inputs_[i] + f * inputs_[i + 1] + bias;
        };
        return rk4_integrate(setup_.x0, dt, K, input, setup_.g);
    }

    void eval_into(const SampleContext &ctx, const Vector &xi2, Eigen::Ref<Matrix> A,
                   Eigen::Ref<Vector> b) const override {
        const std::size_t k = sample_index(ctx);
        fill(states(xi2, k + 1).back(), A, b);
    }

    void evaluate(std::span<const SampleContext> contexts, const Vector &xi2, Eigen::Ref<Matrix> A_big,
                  Eigen::Ref<Vector> b_big) const override {
        std::size_t kmax = 0;
        std::vector<std::size_t> idx(contexts.size());
        for (std::size_t i = 0; i < contexts.size(); ++i) {
            idx[i] = sample_index(contexts[i]);
            kmax = std::max(kmax, idx[i]);
        }
        const auto s = states(xi2, kmax + 1);
        for (std::size_t i = 0; i < contexts.size(); ++i)
            fill(s[idx[i]], A_big.middleRows(static_cast<Index>(i) * 6, 6),
                 b_big.segment(static_cast<Index>(i) * 6, 6));
    }

  private:
    std::size_t sample_index(const SampleContext &ctx) const {
        const double pos = ctx.x[0] / setup_.dt;
        const long k = std::lround(pos);
        if (k < 0 || static_cast<std::size_t>(k) >= inputs_.size() || std::abs(pos - double(k)) > 1e-6)
            throw InvalidDataError("datacompat: sample time outside the input history grid");
        return static_cast<std::size_t>(k);
    }

    static void fill(const Vec6 &s, Eigen::Ref<Matrix> A, Eigen::Ref<Vector> b) {
        const auto air = datacompat_airdata(s[0], s[1], s[2]);
        const double q[6] = {air.V, air.beta, air.alpha, s[3], s[4], s[5]};
        A.setZero();
        for (Index j = 0; j < 6; ++j) {
            A(j, 2 * j) = q[j];
            A(j, 2 * j + 1) = 1.0;
            b[j] = q[j];
        }
    }

    ParamSpace space_;
    DataCompatSetup setup_;
    std::vector<Vec6> inputs_;
};

} // namespace twostage::models
