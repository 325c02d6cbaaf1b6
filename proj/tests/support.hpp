#pragma once

// Seeded generators for the property tests.

#include "mmwloc/filters.hpp"
#include "mmwloc/measurement.hpp"
#include "mmwloc/state_space.hpp"
#include "mmwloc/types.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <vector>

namespace mmwloc::test {

class Gen {
public:
    explicit Gen(std::uint64_t seed) : rng_(seed) {}

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
    double normal() { return normal_(rng_); }
    int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

    Eigen::VectorXd normal_vec(int n) {
        Eigen::VectorXd v(n);
        for (int i = 0; i < n; ++i) v(i) = normal();
        return v;
    }

    Eigen::MatrixXd matrix(int r, int c, double scale = 1.0) {
        Eigen::MatrixXd m(r, c);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) m(i, j) = scale * normal();
        return m;
    }

    /// Symmetric positive definite with eigenvalues roughly in [floor, floor + scale * n].
    Eigen::MatrixXd spd(int n, double scale = 1.0, double floor = 0.1) {
        const Eigen::MatrixXd a = matrix(n, n, std::sqrt(scale));
        Eigen::MatrixXd p = a * a.transpose() + floor * Eigen::MatrixXd::Identity(n, n);
        return 0.5 * (p + p.transpose());
    }

    /// Symmetric PSD, possibly rank deficient.
    Eigen::MatrixXd psd(int n, int rank) {
        const Eigen::MatrixXd a = matrix(n, rank);
        return a * a.transpose();
    }

    Vec3 vec3(double lo, double hi) { return {uniform(lo, hi), uniform(lo, hi), uniform(lo, hi)}; }

    /// State whose position keeps at least `clearance` horizontal distance from every anchor.
    StateVector state_near(const AnchorList& anchors, double clearance = 2.0) {
        while (true) {
            Vec3 p(uniform(-60, 60), uniform(-60, 60), uniform(-5, 5));
            bool ok = true;
            for (const auto& a : anchors)
                if (std::hypot(p.x() - a.position.x(), p.y() - a.position.y()) < clearance) ok = false;
            if (!ok) continue;
            Vec3 v(uniform(-15, 15), uniform(-15, 15), uniform(-1, 1));
            if (std::hypot(v.x(), v.y()) < 0.1) continue;
            return make_state(p, v, uniform(-2, 2));
        }
    }

    std::mt19937_64& engine() { return rng_; }

private:
    std::mt19937_64 rng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

inline Anchor anchor(int id, Vec3 pos, bool los) {
    Anchor a;
    a.id = id;
    a.position = pos;
    a.kind = los ? AnchorKind::Physical : AnchorKind::Virtual;
    a.channels = ChannelSet::all_anchor();
    if (los) a.channels.insert(Channel::Doppler);
    return a;
}

inline AnchorList three_anchors() {
    return {anchor(1, {0, 0, 10}, true), anchor(2, {45, 0, 8}, false), anchor(3, {20, 40, 8}, false)};
}

/// Correctly specified 7-D linear-Gaussian run: CV dynamics with the default
/// process noise, position and bias observed directly.
struct LinearRun {
    int dof = 4;
    std::vector<double> nis;
    std::vector<double> nees;  // position subspace, 3 dof
    std::vector<StateEstimate> estimates;
    std::vector<StateVector> truth;
};

inline Eigen::MatrixXd position_bias_observer() {
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(4, kStateDim);
    h(0, idx::kX) = h(1, idx::kY) = h(2, idx::kZ) = h(3, idx::kBias) = 1.0;
    return h;
}

inline LinearRun run_linear(std::uint64_t seed, std::size_t epochs, FilterKind kind = FilterKind::Ekf) {
    Gen g(seed);
    const auto tr = build_transition(1.0);
    const StateMatrix q = build_process_noise(ProcessNoiseParams{}, 0.5);
    const StateVector q_sd = q.diagonal().cwiseSqrt();
    const LinearModel model{position_bias_observer()};
    const Eigen::Vector4d r_sd(0.5, 0.5, 0.8, 0.3);
    const Eigen::MatrixXd r = Eigen::VectorXd(r_sd.cwiseAbs2()).asDiagonal();

    StateEstimate est{StateVector::Zero(), StateMatrix::Identity(), 0};
    StateVector x;
    for (int i = 0; i < kStateDim; ++i) x(i) = g.normal();
    LinearRun out;
    for (std::size_t k = 0; k < epochs; ++k) {
        StateVector w;
        for (int i = 0; i < kStateDim; ++i) w(i) = q_sd(i) * g.normal();
        x = tr.F * x + w;
        Eigen::VectorXd z = model.H * x;
        for (int i = 0; i < 4; ++i) z(i) += r_sd(i) * g.normal();
        const auto pred = propagate(est, tr, q);
        const auto in = innovate(kind, pred, z, model, r);
        out.nis.push_back(in.nis());
        est = correct(pred, in);
        const Eigen::Vector3d e = (est.mean - x).head<3>();
        out.nees.push_back(e.dot(est.cov.topLeftCorner<3, 3>().ldlt().solve(e)));
        out.estimates.push_back(est);
        out.truth.push_back(x);
    }
    return out;
}

inline double max_abs(const Eigen::MatrixXd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace mmwloc::test
