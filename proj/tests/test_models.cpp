#include "twostage/models/simulate.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace twostage;
using namespace twostage::models;

namespace {

Mat3 rot_x(double a) {
    Mat3 R;
    R << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
    return R;
}
Mat3 rot_y(double a) {
    Mat3 R;
    R << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
    return R;
}
Mat3 rot_z(double a) {
    Mat3 R;
    R << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
    return R;
}

} // namespace

// -----------------------------------------------------------------------------
// Kinematics
// -----------------------------------------------------------------------------

TEST(Kinematics, DcmMatchesElementaryRotations) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1.2, 1.2);
    for (int t = 0; t < 50; ++t) {
        const double phi = u(rng), theta = u(rng), psi = 2.5 * u(rng);
        const Mat3 C = dcm_body_to_ned(phi, theta, psi);
        const Mat3 ref = rot_z(psi) * rot_y(theta) * rot_x(phi);
        EXPECT_LT((C - ref).cwiseAbs().maxCoeff(), 1e-14);
        EXPECT_LT((C * C.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-14);
        EXPECT_NEAR(C.determinant(), 1.0, 1e-14);
        // The (1,2) entry (0-based) carries the cos(phi) sin(theta) sin(psi) term.
        EXPECT_NEAR(C(1, 2), std::cos(phi) * std::sin(theta) * std::sin(psi) - std::sin(phi) * std::cos(psi),
                    1e-15);
    }
}

TEST(Kinematics, MisalignmentIsRotation) {
    const Mat3 C = misalignment_dcm(0.1);
    EXPECT_LT((C * C.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((C - rot_x(0.1).transpose()).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((misalignment_dcm(0.0) - Mat3::Identity()).norm(), 1e-15);
}

TEST(Kinematics, SkewIsCrossProduct) {
    const Vec3 a(0.3, -1.2, 2.0), b(-0.7, 0.4, 1.1);
    EXPECT_LT((skew(a) * b - a.cross(b)).norm(), 1e-15);
    EXPECT_LT((skew(a) + skew(a).transpose()).norm(), 1e-15);
}

TEST(Kinematics, EulerRateMatrixInvertsRateEquation) {
    // Body rates from Euler angle rates: omega = [phidot - st psidot, ...].
    const double phi = 0.3, theta = -0.2;
    const double sf = std::sin(phi), cf = std::cos(phi), st = std::sin(theta), ct = std::cos(theta);
    Mat3 Einv;
    Einv << 1, 0, -st, 0, cf, sf * ct, 0, -sf, cf * ct;
    EXPECT_LT((euler_rate_matrix(phi, theta) * Einv - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-14);
}

// -----------------------------------------------------------------------------
// Pitot
// -----------------------------------------------------------------------------

TEST(Pitot, AirDataOracle) {
    Vector u(10);
    u << 1.0, -0.5, 101500.0, 101325.0, 0, 0, 0, 0, 0, 0;
    Vector xi2(5);
    xi2 << 0.1, 0.01, -0.2, 0.02, 0.0;
    const PitotConstants k;
    const AirData a = pitot_airdata(u, xi2, k);
    // dp = 175 Pa
    EXPECT_NEAR(a.V_raw, std::sqrt(350.0 / 1.225), 1e-12);
    EXPECT_NEAR(a.ratio_alpha, 1.0 / (0.0833 * 175.0), 1e-15);
    EXPECT_NEAR(a.ratio_beta, -0.5 / (0.0833 * 175.0), 1e-15);
    EXPECT_NEAR(a.alpha, 1.1 * a.ratio_alpha + 0.01, 1e-15);
    EXPECT_NEAR(a.beta, 0.8 * a.ratio_beta + 0.02, 1e-15);
}

TEST(Pitot, NonPositiveDynamicPressureThrows) {
    Vector u = Vector::Zero(10);
    u[2] = 100.0;
    u[3] = 100.0;
    EXPECT_THROW(pitot_airdata(u, Vector::Zero(5), PitotConstants{}), InvalidDataError);
    u[3] = 101.0;
    EXPECT_THROW(pitot_airdata(u, Vector::Zero(5), PitotConstants{}), InvalidDataError);
}

TEST(Pitot, InvalidConstantsThrow) {
    Vector u = Vector::Zero(10);
    u[2] = 200.0;
    PitotConstants k;
    k.K_alpha = 0.0;
    EXPECT_THROW(pitot_airdata(u, Vector::Zero(5), k), InvalidModelError);
}

TEST(Pitot, FlowDirectionIsUnit) {
    for (double a : {-0.3, 0.0, 0.2})
        for (double b : {-0.2, 0.1})
            EXPECT_NEAR(flow_direction(a, b).norm(), 1.0, 1e-15);
    EXPECT_LT((flow_direction(0, 0) - Vec3::UnitX()).norm(), 1e-15);
}

TEST(Pitot, ScheduleErrorsNameTheSegment) {
    SimSpec s;
    s.model = "pitot";
    s.schedule = {ScheduleSegment{"steady-turn", 10.0}, ScheduleSegment{"barrel-roll", 5.0}};
    try {
        simulate(s);
        FAIL() << "expected InvalidDataError";
    } catch (const InvalidDataError &e) {
        EXPECT_NE(std::string(e.what()).find("schedule segment 1 (barrel-roll)"), std::string::npos) << e.what();
    }
    s.schedule = {ScheduleSegment{"chirp", 10.0, 1.0, 17.0, "roll"}};
    EXPECT_THROW(simulate(s), InvalidDataError);
    s.schedule = {ScheduleSegment{"doublet", -1.0}};
    EXPECT_THROW(simulate(s), InvalidDataError);
    s.schedule = {ScheduleSegment{"doublet", 5.0, 1.0, 4.0}};
    EXPECT_THROW(simulate(s), InvalidDataError);
}

// -----------------------------------------------------------------------------
// Magnetometer
// -----------------------------------------------------------------------------

TEST(Magnetometer, CanonicalFormMatchesDirectModel) {
    Vector xi2(6);
    xi2 << 0.02, -0.01, 0.015, 0.01, -0.02, 0.015;
    Vector xi1(6);
    xi1 << 0.05, -0.03, 0.02, 0.1, -0.05, 0.2;
    const Vec3 hb(0.2, -0.1, 0.45);
    const MagBlocks blk = mag_build(hb, xi2);
    const Mat3 Ca = soft_iron_matrix(xi2[0], xi2[1], xi2[2]);
    EXPECT_LT((Ca - Ca.transpose()).norm(), 1e-15);
    const Mat3 Ce = Mat3::Identity() + skew(Vec3(xi2[3], xi2[4], xi2[5]));
    const Vec3 scale = Vec3::Ones() + xi1.head<3>();
    const Vec3 direct = Ca * Ce * scale.asDiagonal() * hb + xi1.tail<3>();
    EXPECT_LT((blk.A * xi1 + blk.b - direct).norm(), 1e-15);
}

// -----------------------------------------------------------------------------
// Datacompat
// -----------------------------------------------------------------------------

TEST(DataCompat, AirDataOracle) {
    const auto a = datacompat_airdata(20.0, 1.0, 2.0);
    EXPECT_NEAR(a.V, std::sqrt(405.0), 1e-13);
    EXPECT_NEAR(a.beta, std::asin(1.0 / std::sqrt(405.0)), 1e-15);
    EXPECT_NEAR(a.alpha, std::atan(0.1), 1e-15);
    EXPECT_THROW(datacompat_airdata(0.0, 1.0, 1.0), InvalidDataError);
}

TEST(DataCompat, Rk4TracksAnalyticReference) {
    const double dt = 0.02, g = 9.80665;
    const std::size_t K = 501;
    const Vec6 x0 = datacompat_reference(0.0).first;
    const auto traj = rk4_integrate(x0, dt, K, [g](double t) { return datacompat_true_inputs(t, g); }, g);
    ASSERT_EQ(traj.size(), K);
    double worst = 0.0;
    for (std::size_t k = 0; k < K; ++k)
        worst = std::max(worst, (traj[k] - datacompat_reference(static_cast<double>(k) * dt).first).norm());
    EXPECT_LT(worst, 1e-6);
}

TEST(DataCompat, Rk4ErrorIsFourthOrder) {
    const double g = 9.80665, T = 4.0;
    auto err = [&](double dt) {
        const auto K = static_cast<std::size_t>(std::llround(T / dt)) + 1;
        const auto traj = rk4_integrate(datacompat_reference(0.0).first, dt, K,
                                        [g](double t) { return datacompat_true_inputs(t, g); }, g);
        return (traj.back() - datacompat_reference(T).first).norm();
    };
    const double ratio = err(0.2) / err(0.1);
    EXPECT_GT(ratio, 10.0);
    EXPECT_LT(ratio, 24.0);
}

TEST(DataCompat, NeedsInputHistory) {
    EXPECT_THROW(make_model("datacompat"), InvalidModelError);
    std::vector<SampleContext> ctx{SampleContext{Vector::Constant(1, 0.0), Vector::Zero(6)},
                                   SampleContext{Vector::Constant(1, 0.5), Vector::Zero(6)}};
    EXPECT_THROW(make_model("datacompat", {}, &ctx), InvalidDataError);
}

// -----------------------------------------------------------------------------
// Registry and simulation
// -----------------------------------------------------------------------------

TEST(Registry, UnknownIdThrows) {
    EXPECT_THROW(make_model("nope"), InvalidModelError);
    EXPECT_THROW(default_space("nope"), InvalidModelError);
    EXPECT_THROW(default_truth("nope"), InvalidModelError);
}

TEST(Registry, DefaultTruthInsideBoxAndBall) {
    for (const auto &id : model_ids()) {
        const auto sp = default_space(id);
        const auto t = default_truth(id);
        EXPECT_TRUE(sp.contains1(t.xi1)) << id;
        EXPECT_TRUE(sp.contains2(t.xi2)) << id;
        EXPECT_LE((t.xi2 - sp.nominal2()).norm(), sp.ell2) << id;
        EXPECT_EQ(t.xi1.size(), sp.n1()) << id;
        EXPECT_EQ(t.xi2.size(), sp.n2()) << id;
    }
}

TEST(Simulate, ZeroNoiseEqualsPrediction) {
    for (const auto &id : model_ids()) {
        SimSpec s;
        s.model = id;
        s.noise_std = Vector::Zero(1);
        const auto sim = simulate(s);
        ASSERT_GT(sim.data.size(), 3u) << id;
        for (std::size_t k = 0; k < sim.data.size(); ++k) {
            const Vector zhat = predict(*sim.model, sim.data.contexts[k], sim.truth.xi1, sim.truth.xi2);
            EXPECT_LT((zhat - sim.data.z[k]).lpNorm<Eigen::Infinity>(), 1e-12) << id << " sample " << k;
            EXPECT_LT((sim.truth.clean.row(static_cast<Index>(k)).transpose() - zhat).norm(), 1e-12);
        }
    }
}

TEST(Simulate, SeedReproducibility) {
    SimSpec s;
    s.model = "magnetometer";
    s.seed = 7;
    const auto a = simulate(s), b = simulate(s);
    s.seed = 8;
    const auto c = simulate(s);
    EXPECT_EQ(a.data.stacked_z(), b.data.stacked_z());
    EXPECT_NE(a.data.stacked_z(), c.data.stacked_z());
}

TEST(Simulate, NoiseStatistics) {
    SimSpec s;
    s.model = "scalar1";
    s.N = 20000;
    s.noise_std = Vector::Constant(1, 0.3);
    const auto sim = simulate(s);
    Vector e(static_cast<Index>(sim.data.size()));
    for (std::size_t k = 0; k < sim.data.size(); ++k)
        e[static_cast<Index>(k)] = sim.data.z[k][0] - sim.truth.clean(static_cast<Index>(k), 0);
    EXPECT_NEAR(e.mean(), 0.0, 5 * 0.3 / std::sqrt(20000.0));
    EXPECT_NEAR(std::sqrt(e.squaredNorm() / e.size()), 0.3, 0.01);
}

TEST(Simulate, RejectsBadSpecs) {
    SimSpec s;
    s.model = "pitot";
    s.noise_std = Vector::Constant(2, 1.0);
    EXPECT_THROW(simulate(s), InvalidDataError);
    s.noise_std = Vector::Constant(1, -1.0);
    EXPECT_THROW(simulate(s), InvalidDataError);
    s = SimSpec{};
    s.model = "scalar1";
    s.xi2 = Vector::Constant(1, 5.0);
    EXPECT_THROW(simulate(s), OutOfBoundsError);
    s.xi2 = Vector::Constant(2, 0.1);
    EXPECT_THROW(simulate(s), InvalidDataError);
}
