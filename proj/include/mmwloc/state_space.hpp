#pragma once

// Constant-velocity kinematics over the 7-D state and the Doppler-adaptive
// process noise.

#include "mmwloc/error.hpp"
#include "mmwloc/linalg.hpp"
#include "mmwloc/types.hpp"

#include <cmath>

namespace mmwloc {

struct TransitionModel {
    StateMatrix F = StateMatrix::Identity();
    double dt = 1.0;
};

/// Diagonal process-noise parameters. Velocity variances scale with the
/// epoch's Doppler spread as base * (1 + kappa_d * spread).
struct ProcessNoiseParams {
    double sigma_p2 = 0.01;
    double sigma_pz2 = 0.01;
    double sigma_v2_base = 0.05;
    double sigma_vz2_base = 0.01;
    double sigma_b2 = 1e-4;
    double kappa_d = 1.0;

    /// Flat terrain: pins z and vz.
    ProcessNoiseParams flattened() const {
        ProcessNoiseParams out = *this;
        out.sigma_pz2 = 0.0;
        out.sigma_vz2_base = 0.0;
        return out;
    }
};

inline TransitionModel build_transition(double dt) {
    if (!(dt > 0.0) || !std::isfinite(dt))
        throw InvalidArgument("build_transition: dt must be positive and finite");
    TransitionModel m;
    m.dt = dt;
    m.F.block<3, 3>(idx::kX, idx::kVx) = dt * Eigen::Matrix3d::Identity();
    return m;
}

inline StateMatrix build_process_noise(const ProcessNoiseParams& p, double doppler_spread) {
    if (!(doppler_spread >= 0.0) || !std::isfinite(doppler_spread))
        throw InvalidArgument("build_process_noise: doppler spread must be non-negative");
    if (p.sigma_p2 < 0 || p.sigma_pz2 < 0 || p.sigma_v2_base < 0 || p.sigma_vz2_base < 0 ||
        p.sigma_b2 < 0)
        throw InvalidArgument("build_process_noise: variances must be non-negative");
    const double scale = 1.0 + p.kappa_d * doppler_spread;
    StateVector d;
    d << p.sigma_p2, p.sigma_p2, p.sigma_pz2, p.sigma_v2_base * scale, p.sigma_v2_base * scale,
        p.sigma_vz2_base * scale, p.sigma_b2;
    return d.asDiagonal();
}

/// Linear prediction: mean <- F mean, cov <- F P F^T + Q.
template <int N>
Gaussian<N> propagate(const Gaussian<N>& est, const Eigen::Matrix<double, N, N>& f,
                      const Eigen::MatrixXd& q) {
    const auto n = est.mean.size();
    if (f.rows() != n || f.cols() != n || q.rows() != n || q.cols() != n ||
        est.cov.rows() != n || est.cov.cols() != n)
        throw InvalidArgument("propagate: dimension mismatch");
    Gaussian<N> out;
    out.mean = f * est.mean;
    out.cov = f * est.cov * f.transpose() + q;
    linalg::symmetrize(out.cov);
    out.epoch = est.epoch + 1;
    return out;
}

inline StateEstimate propagate(const StateEstimate& est, const TransitionModel& model,
                               const Eigen::MatrixXd& q) {
    return propagate<kStateDim>(est, model.F, q);
}

}  // namespace mmwloc
