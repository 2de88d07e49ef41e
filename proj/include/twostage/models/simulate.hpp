// Model registry and synthetic data generators for the bundled models.
#pragma once

#include "../canon.hpp"
#include "datacompat.hpp"
#include "kinematics.hpp"
#include "magnetometer.hpp"
#include "pitot.hpp"
#include "scalar.hpp"

#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace twostage::models {

inline const std::vector<std::string> &model_ids() {
    static const std::vector<std::string> ids = {"scalar1", "scalar2", "pitot", "magnetometer",
                                                 "datacompat"};
    return ids;
}

/// Model-specific constants that are not estimated.
struct ModelOptions {
    PitotConstants pitot;
    DataCompatSetup datacompat;
    std::optional<ParamSpace> space; ///< overrides the model's default space
};

inline ParamSpace default_space(const std::string &id) {
    if (id == "scalar1")
        return Scalar1Model::default_space();
    if (id == "scalar2")
        return Scalar2Model::default_space();
    if (id == "pitot")
        return PitotModel::default_space();
    if (id == "magnetometer")
        return MagModel::default_space();
    if (id == "datacompat")
        return DataCompatModel::default_space();
    throw InvalidModelError("unknown model id '" + id + "'");
}

/// Builds a model. The data-compatibility model needs the dataset contexts,
/// which carry its input history.
inline std::shared_ptr<const CanonicalModel> make_model(const std::string &id, const ModelOptions &opt = {},
                                                        const std::vector<SampleContext> *contexts = nullptr) {
    const ParamSpace sp = opt.space ? *opt.space : default_space(id);
    if (id == "scalar1")
        return std::make_shared<Scalar1Model>(sp);
    if (id == "scalar2")
        return std::make_shared<Scalar2Model>(sp);
    if (id == "pitot")
        return std::make_shared<PitotModel>(sp, opt.pitot);
    if (id == "magnetometer")
        return std::make_shared<MagModel>(sp);
    if (id == "datacompat") {
        if (!contexts)
            throw InvalidModelError("datacompat: the model needs the dataset's input history");
        return std::make_shared<DataCompatModel>(DataCompatModel::from_contexts(*contexts, opt.datacompat, sp));
    }
    throw InvalidModelError("unknown model id '" + id + "'");
}

// -----------------------------------------------------------------------------
// Simulation spec
// -----------------------------------------------------------------------------

/// One manoeuvre primitive of a synthetic flight schedule.
struct ScheduleSegment {
    std::string type;      ///< steady-turn, pushover-pullup, chirp, doublet, multisine
    double duration = 0.0; ///< s
    double amplitude = 1.0;
    double airspeed = 17.0; ///< m/s, baseline for the segment
    std::string axis = "pitch"; ///< chirp axis: pitch or yaw
};

struct SimSpec {
    std::string model;
    std::optional<Vector> xi1, xi2; ///< truth; model defaults when absent
    std::optional<Vector> noise_std; ///< per channel (or a single value for all channels)
    Index N = 0;                    ///< 0 selects the model default
    std::uint64_t seed = 1;
    std::vector<ScheduleSegment> schedule; ///< pitot only; empty selects the default mix
    ModelOptions options;
};

struct TruthRecord {
    std::string model;
    Vector xi1, xi2;
    Vector noise_std;
    std::uint64_t seed = 0;
    Matrix clean; ///< N x m noise-free outputs
};

struct Simulation {
    Dataset data;
    TruthRecord truth;
    std::shared_ptr<const CanonicalModel> model;
    ModelOptions options;
};

struct DefaultTruth {
    Vector xi1, xi2, noise;
    Index N;
};

inline DefaultTruth default_truth(const std::string &id) {
    constexpr double deg = std::numbers::pi / 180.0;
    if (id == "scalar1")
        return {Vector::Ones(2), Vector::Constant(1, 0.1), Vector::Constant(1, 0.3), 100};
    if (id == "scalar2")
        return {Vector::Ones(2), (Vector(2) << 0.05, 0.1).finished(), Vector::Constant(1, 0.3), 100};
    if (id == "pitot")
        return {(Vector(5) << -0.1748, 4.3553, -3.8038, -2.4137, -0.7168).finished(),
                (Vector(5) << 0.2982, -2.4854 * deg, -0.2673, -1.2980 * deg, -0.1380).finished(),
                Vector::Constant(3, 1.0), 0};
    if (id == "magnetometer")
        return {(Vector(6) << 0.05, -0.03, 0.02, 0.1, -0.05, 0.2).finished(),
                (Vector(6) << 0.02, -0.01, 0.015, 0.01, -0.02, 0.015).finished(),
                Vector::Constant(3, 0.005), 300};
    if (id == "datacompat")
        return {(Vector(12) << 0.05, 0.8, 0.03, 0.01, -0.04, 0.02, 0.02, 0.01, -0.03, 0.015, 0.01, -0.02)
                    .finished(),
                (Vector(6) << 0.1, -0.08, 0.12, 0.004, -0.003, 0.005).finished(),
                (Vector(6) << 0.2, 0.005, 0.005, 0.003, 0.003, 0.003).finished(), 1000};
    throw InvalidModelError("unknown model id '" + id + "'");
}

inline std::vector<ScheduleSegment> default_pitot_schedule() {
    std::vector<ScheduleSegment> s;
    s.push_back({"steady-turn", 15.0, 30.0, 15.0, "pitch"});
    s.push_back({"steady-turn", 15.0, -30.0, 20.0, "pitch"});
    s.push_back({"pushover-pullup", 6.0, 1.0, 17.0, "pitch"});
    for (int i = 0; i < 4; ++i)
        s.push_back({"multisine", 3.0, 1.0 + 0.25 * i, 16.0 + 2.0 * i, "pitch"});
    s.push_back({"chirp", 5.0, 1.0, 18.0, "pitch"});
    s.push_back({"chirp", 5.0, 1.0, 17.0, "yaw"});
    s.push_back({"doublet", 2.0, 1.0, 17.0, "pitch"});
    return s;
}

// -----------------------------------------------------------------------------
// Pitot trajectory synthesis
// -----------------------------------------------------------------------------

/// True flight condition sampled at 50 Hz.
struct FlightProfile {
    std::vector<double> t, Va, alpha, beta, phi, theta, psi;
    std::vector<Vec3> omega; ///< true body rates
};

inline double taper(double tau, double T) {
    const double ramp = std::min(1.0, 0.25 * T);
    auto smooth = [](double x) { return x <= 0 ? 0.0 : x >= 1 ? 1.0 : x * x * (3.0 - 2.0 * x); };
    return smooth(tau / ramp) * smooth((T - tau) / ramp);
}

inline FlightProfile synthesize_flight(const std::vector<ScheduleSegment> &schedule, double dt, double g) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    constexpr double deg = std::numbers::pi / 180.0;
    const double alpha0 = 0.06;
    FlightProfile f;
    std::vector<double> psidot;
    double t0 = 0.0;
    for (std::size_t si = 0; si < schedule.size(); ++si) {
        const auto &seg = schedule[si];
        const std::string where = "schedule segment " + std::to_string(si) + " (" + seg.type + ")";
        if (!(seg.duration > 0.0))
            throw InvalidDataError(where + ": duration must be positive");
        if (!(seg.airspeed > 5.0))
            throw InvalidDataError(where + ": airspeed must exceed 5 m/s");
        const auto n = static_cast<std::size_t>(std::llround(seg.duration / dt));
        for (std::size_t i = 0; i < n; ++i) {
            const double tau = static_cast<double>(i) * dt, T = seg.duration;
            const double w = taper(tau, T);
            double Va = seg.airspeed, a = alpha0, b = 0.0, ph = 0.0, th = alpha0, pd = 0.0;
            if (seg.type == "steady-turn") {
                ph = w * seg.amplitude * deg;
                a += 0.03 * w * std::abs(seg.amplitude) / 30.0;
                th = a;
                pd = g * std::tan(ph) / Va;
            } else if (seg.type == "pushover-pullup") {
                const double s = std::sin(two_pi * tau / T);
                th = alpha0 + w * 0.2 * seg.amplitude * s;
                a = alpha0 + w * 0.06 * seg.amplitude * std::cos(two_pi * tau / T);
                Va -= w * 3.0 * s;
            } else if (seg.type == "multisine") {
                const double A = seg.amplitude * w;
                a += A * 0.03 * (std::sin(two_pi * 0.7 * tau) + std::sin(two_pi * 1.3 * tau + 1.0));
                b += A * 0.03 * (std::sin(two_pi * 0.9 * tau + 0.5) + std::sin(two_pi * 1.7 * tau + 2.0));
                ph = A * 0.15 * std::sin(two_pi * 0.5 * tau);
                th = a;
                Va += A * 1.5 * std::sin(two_pi * 0.3 * tau + 0.7);
            } else if (seg.type == "chirp") {
                const double f0 = 0.2, f1 = 1.5;
                const double phase = two_pi * (f0 * tau + 0.5 * (f1 - f0) * tau * tau / T);
                const double s = w * seg.amplitude * std::sin(phase);
                if (seg.axis == "pitch") {
                    a += 0.05 * s;
                    th = a + 0.02 * s;
                    Va -= 2.0 * s;
                } else if (seg.axis == "yaw") {
                    b += 0.06 * s;
                    pd = 0.15 * s;
                    ph = 0.1 * s;
                } else {
                    throw InvalidDataError(where + ": chirp axis must be pitch or yaw");
                }
            } else if (seg.type == "doublet") {
                const double sq = tau < 0.5 * T ? 1.0 : -1.0;
                b += 0.06 * seg.amplitude * sq * taper(std::fmod(tau, 0.5 * T), 0.5 * T);
            } else {
                throw InvalidDataError(where + ": unknown manoeuvre type");
            }
            f.t.push_back(t0 + tau);
            f.Va.push_back(Va);
            f.alpha.push_back(a);
            f.beta.push_back(b);
            f.phi.push_back(ph);
            f.theta.push_back(th);
            psidot.push_back(pd);
        }
        t0 += static_cast<double>(n) * dt;
    }
    const std::size_t K = f.t.size();
    if (K < 3)
        throw InvalidDataError("pitot schedule produces fewer than three samples");
    f.psi.assign(K, 0.3);
    for (std::size_t k = 1; k < K; ++k)
        f.psi[k] = f.psi[k - 1] + 0.5 * dt * (psidot[k - 1] + psidot[k]);
    auto deriv = [&](const std::vector<double> &x, std::size_t k) {
        if (k == 0)
            return (x[1] - x[0]) / dt;
        if (k + 1 == K)
            return (x[K - 1] - x[K - 2]) / dt;
        return (x[k + 1] - x[k - 1]) / (2.0 * dt);
    };
    for (std::size_t k = 0; k < K; ++k) {
        const Vec3 euler_dot(deriv(f.phi, k), deriv(f.theta, k), deriv(f.psi, k));
        f.omega.push_back(euler_rate_matrix(f.phi[k], f.theta[k]).inverse() * euler_dot);
    }
    return f;
}

// -----------------------------------------------------------------------------
// Datacompat reference trajectory
// -----------------------------------------------------------------------------

/// Smooth analytic reference state s(t) and its derivative.
inline std::pair<Vec6, Vec6> datacompat_reference(double t) {
    Vec6 s, d;
    s << 20.0 + 2.0 * std::sin(0.5 * t) + std::sin(1.3 * t + 0.4),
         0.8 * std::sin(0.9 * t) + 0.4 * std::sin(2.1 * t + 1.0),
         1.5 + 0.8 * std::sin(0.7 * t + 0.3) + 0.3 * std::sin(1.9 * t),
         0.3 * std::sin(0.4 * t) + 0.1 * std::sin(1.7 * t + 0.5),
         0.05 + 0.1 * std::sin(0.6 * t + 0.2) + 0.04 * std::sin(2.3 * t),
         0.5 + 0.3 * std::sin(0.25 * t) + 0.1 * std::sin(1.1 * t);
    d << 1.0 * std::cos(0.5 * t) + 1.3 * std::cos(1.3 * t + 0.4),
         0.72 * std::cos(0.9 * t) + 0.84 * std::cos(2.1 * t + 1.0),
         0.56 * std::cos(0.7 * t + 0.3) + 0.57 * std::cos(1.9 * t),
         0.12 * std::cos(0.4 * t) + 0.17 * std::cos(1.7 * t + 0.5),
         0.06 * std::cos(0.6 * t + 0.2) + 0.092 * std::cos(2.3 * t),
         0.075 * std::cos(0.25 * t) + 0.11 * std::cos(1.1 * t);
    return {s, d};
}

/// True (bias-free) inputs that make the reference trajectory satisfy the kinematics.
inline Vec6 datacompat_true_inputs(double t, double g) {
    const auto [s, d] = datacompat_reference(t);
    const double phi = s[3], theta = s[4];
    const double sf = std::sin(phi), cf = std::cos(phi), st = std::sin(theta), ct = std::cos(theta);
    Mat3 Einv;
    Einv << 1.0, 0.0, -st,
            0.0, cf, sf * ct,
            0.0, -sf, cf * ct;
    const Vec3 w = Einv * d.tail<3>();
    const double p = w[0], q = w[1], r = w[2];
    Vec6 in;
    in[0] = d[0] - (r * s[1] - q * s[2] - g * st);
    in[1] = d[1] - (-r * s[0] + p * s[2] + g * sf * ct);
    in[2] = d[2] - (q * s[0] - p * s[1] + g * cf * ct);
    in.tail<3>() = w;
    return in;
}

// -----------------------------------------------------------------------------
// simulate
// -----------------------------------------------------------------------------

inline Simulation simulate(const SimSpec &spec) {
    const DefaultTruth def = default_truth(spec.model);
    Simulation sim;
    sim.options = spec.options;
    TruthRecord &tr = sim.truth;
    tr.model = spec.model;
    tr.seed = spec.seed;
    tr.xi1 = spec.xi1.value_or(def.xi1);
    tr.xi2 = spec.xi2.value_or(def.xi2);
    const Index m = def.noise.size();
    tr.noise_std = spec.noise_std.value_or(def.noise);
    if (tr.noise_std.size() == 1 && m > 1)
        tr.noise_std = Vector::Constant(m, tr.noise_std[0]);
    if (tr.noise_std.size() != m)
        throw InvalidDataError("simulate: noise_std must have one entry per output channel");
    if ((tr.noise_std.array() < 0.0).any())
        throw InvalidDataError("simulate: noise_std must be non-negative");
    const Index N = spec.N > 0 ? spec.N : def.N;
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> n01(0.0, 1.0);

    Dataset &data = sim.data;
    const std::string &id = spec.model;
    if (id == "scalar1" || id == "scalar2") {
        data.contexts = eta_contexts(linspace(1.0, 10.0, N));
    } else if (id == "magnetometer") {
        for (Index k = 0; k < N; ++k) {
            Vec3 h(n01(rng), n01(rng), n01(rng));
            h.normalize();
            data.contexts.push_back({h, Vector(0)});
        }
    } else if (id == "datacompat") {
        DataCompatSetup &setup = sim.options.datacompat;
        setup.x0 = datacompat_reference(0.0).first;
        const Vec6 bias = tr.xi2;
        for (Index k = 0; k < N; ++k) {
            const double t = static_cast<double>(k) * setup.dt;
            const Vec6 measured = datacompat_true_inputs(t, setup.g) - bias;
            data.contexts.push_back({Vector::Constant(1, t), measured});
        }
    } else if (id == "pitot") {
        const PitotConstants &kc = sim.options.pitot;
        const auto f = synthesize_flight(spec.schedule.empty() ? default_pitot_schedule() : spec.schedule,
                                         0.02, 9.80665);
        const Vec3 rate_bias(0.002, -0.001, 0.0015);
        const double lamV = tr.xi1[0], bV = tr.xi1[1];
        const Vec3 W(tr.xi1[2], tr.xi1[3], tr.xi1[4]);
        const Mat3 Ceps = misalignment_dcm(tr.xi2[4]);
        tr.clean.resize(static_cast<Index>(f.t.size()), 3);
        for (std::size_t k = 0; k < f.t.size(); ++k) {
            // Invert the air-data error model to obtain the probe pressures.
            const double V_raw = (f.Va[k] - bV) / (1.0 + lamV);
            if (!(V_raw > 0.0))
                throw InvalidDataError("simulate: schedule sample " + std::to_string(k) +
                                       " gives P_t <= P_s");
            const double dp = 0.5 * kc.rho * V_raw * V_raw;
            const double ps = 95000.0;
            const double ra = (f.alpha[k] - tr.xi2[1]) / (1.0 + tr.xi2[0]);
            const double rb = (f.beta[k] - tr.xi2[3]) / (1.0 + tr.xi2[2]);
            Vector u(4);
            u << ra * kc.K_alpha * dp, rb * kc.K_beta * dp, ps + dp, ps;
            Vector x(9);
            const Vec3 p_meas = f.omega[k] + rate_bias;
            x << p_meas, rate_bias, f.phi[k], f.theta[k], f.psi[k];
            data.contexts.push_back({x, u});
            // Wind triangle from first principles.
            const Mat3 Cnb = dcm_body_to_ned(f.phi[k], f.theta[k], f.psi[k]);
            const Vec3 v_air = Ceps * (f.Va[k] * flow_direction(f.alpha[k], f.beta[k]));
            tr.clean.row(static_cast<Index>(k)) = (Cnb * (v_air - f.omega[k].cross(kc.r)) + W).transpose();
        }
    } else {
        throw InvalidModelError("unknown model id '" + id + "'");
    }

    sim.model = make_model(id, sim.options, &data.contexts);
    const ParamSpace &sp = sim.model->space();
    if (tr.xi1.size() != sp.n1() || tr.xi2.size() != sp.n2())
        throw InvalidDataError("simulate: truth vector lengths do not match model '" + id + "'");
    if (!sp.contains1(tr.xi1) || !sp.contains2(tr.xi2))
        throw OutOfBoundsError("simulate: truth lies outside the model's box bounds");

    if (id != "pitot") {
        const Index rows = static_cast<Index>(data.contexts.size()) * m;
        Matrix A(rows, sp.n1());
        Vector b(rows);
        sim.model->evaluate(data.contexts, tr.xi2, A, b);
        const Vector zc = A * tr.xi1 + b;
        tr.clean = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            zc.data(), rows / m, m);
    }
    for (Index k = 0; k < tr.clean.rows(); ++k) {
        Vector z = tr.clean.row(k).transpose();
        for (Index j = 0; j < m; ++j)
            z[j] += tr.noise_std[j] * n01(rng);
        data.z.push_back(z);
    }
    return sim;
}

} // namespace twostage::models
