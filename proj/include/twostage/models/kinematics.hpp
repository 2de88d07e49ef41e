// Attitude helpers shared by the air-data models.
#pragma once

#include <Eigen/Dense>

#include <cmath>

namespace twostage::models {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;

/// Body-to-NED direction cosine matrix for 3-2-1 Euler angles.
inline Mat3 dcm_body_to_ned(double phi, double theta, double psi) {
    const double sf = std::sin(phi), cf = std::cos(phi);
    const double st = std::sin(theta), ct = std::cos(theta);
    const double sp = std::sin(psi), cp = std::cos(psi);
    Mat3 C;
    C << ct * cp, sf * st * cp - cf * sp, cf * st * cp + sf * sp,
         ct * sp, sf * st * sp + cf * cp, cf * st * sp - sf * cp,
         -st, sf * ct, cf * ct;
    return C;
}

/// Probe-to-body rotation for a roll-axis installation misalignment.
inline Mat3 misalignment_dcm(double eps_phi) {
    const double c = std::cos(eps_phi), s = std::sin(eps_phi);
    Mat3 C;
    C << 1.0, 0.0, 0.0,
         0.0, c, s,
         0.0, -s, c;
    return C;
}

/// [v]x such that skew(v) * w = v.cross(w).
inline Mat3 skew(const Vec3 &v) {
    Mat3 S;
    S << 0.0, -v.z(), v.y(),
         v.z(), 0.0, -v.x(),
         -v.y(), v.x(), 0.0;
    return S;
}

/// Maps body rates to Euler angle rates.
inline Mat3 euler_rate_matrix(double phi, double theta) {
    const double sf = std::sin(phi), cf = std::cos(phi);
    const double tt = std::tan(theta), ct = std::cos(theta);
    Mat3 E;
    E << 1.0, sf * tt, cf * tt,
         0.0, cf, -sf,
         0.0, sf / ct, cf / ct;
    return E;
}

} // namespace twostage::models
