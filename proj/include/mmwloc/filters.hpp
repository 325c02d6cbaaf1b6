#pragma once

// EKF, UKF and CKF measurement updates behind one predict/innovate/correct
// contract. Every filter here works on a Gaussian<N> and a measurement model
// that exposes predict(x) and residual(z, zhat); the EKF also needs
// jacobian(x).

#include "mmwloc/error.hpp"
#include "mmwloc/linalg.hpp"
#include "mmwloc/measurement.hpp"
#include "mmwloc/state_space.hpp"
#include "mmwloc/types.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <functional>
#include <optional>
#include <string_view>
#include <utility>

namespace mmwloc {

template <typename M, int N>
concept MeasurementModel = requires(const M& m, const Eigen::Matrix<double, N, 1>& x,
                                    const Eigen::VectorXd& z) {
    { m.predict(x) } -> std::convertible_to<Eigen::VectorXd>;
    { m.residual(z, z) } -> std::convertible_to<Eigen::VectorXd>;
};

template <typename M, int N>
concept LinearizableModel = MeasurementModel<M, N> && requires(const M& m,
                                                               const Eigen::Matrix<double, N, 1>& x) {
    { m.jacobian(x) } -> std::convertible_to<Eigen::MatrixXd>;
};

/// h(x) = H x with plain subtraction for residuals.
struct LinearModel {
    Eigen::MatrixXd H;

    template <typename Vec>
    Eigen::VectorXd predict(const Vec& x) const { return H * x; }
    template <typename Vec>
    Eigen::MatrixXd jacobian(const Vec&) const { return H; }
    Eigen::VectorXd residual(const Eigen::VectorXd& z, const Eigen::VectorXd& zhat) const {
        return z - zhat;
    }
};

/// Arbitrary callable h(x), optional Jacobian callable.
template <int N>
struct FunctionModel {
    using Vec = Eigen::Matrix<double, N, 1>;
    std::function<Eigen::VectorXd(const Vec&)> h;
    std::function<Eigen::MatrixXd(const Vec&)> dh;

    Eigen::VectorXd predict(const Vec& x) const { return h(x); }
    Eigen::MatrixXd jacobian(const Vec& x) const { return dh(x); }
    Eigen::VectorXd residual(const Eigen::VectorXd& z, const Eigen::VectorXd& zhat) const {
        return z - zhat;
    }
};

/// The ToA/AoA/AoD/Doppler/odometry observation stack along a fixed layout.
struct ChannelModel {
    const AnchorList* anchors = nullptr;
    Layout layout;

    Eigen::VectorXd predict(const StateVector& x) const { return evaluate(x, *anchors, layout); }
    Eigen::MatrixXd jacobian(const StateVector& x) const {
        return mmwloc::jacobian(x, *anchors, layout);
    }
    Eigen::VectorXd residual(const Eigen::VectorXd& z, const Eigen::VectorXd& zhat) const {
        return mmwloc::residual(z, zhat, layout);
    }
};

enum class FilterKind { Ekf, Ukf, Ckf };

inline std::string_view to_string(FilterKind k) {
    switch (k) {
        case FilterKind::Ekf: return "EKF";
        case FilterKind::Ukf: return "UKF";
        case FilterKind::Ckf: return "CKF";
    }
    return "?";
}

/// Scaled unscented transform parameters. n + lambda must stay positive.
struct UnscentedParams {
    double alpha = 1.0;
    double beta = 2.0;
    double kappa = 3.0;

    double lambda(int n) const { return alpha * alpha * (n + kappa) - n; }
};

template <int N>
struct SigmaSet {
    Eigen::Matrix<double, N, Eigen::Dynamic> points;
    Eigen::VectorXd wm;
    Eigen::VectorXd wc;

    Eigen::Index size() const { return points.cols(); }
};

/// 2n+1 scaled sigma points. Column 0 is the mean, columns i and i+n mirror
/// each other about it.
template <int N>
SigmaSet<N> sigma_points(const Gaussian<N>& est, const UnscentedParams& params = {}) {
    const int n = est.dim();
    const double lambda = params.lambda(n);
    if (!(n + lambda > 0.0)) throw InvalidArgument("sigma_points: n + lambda must be positive");
    const Eigen::MatrixXd l = linalg::lower_sqrt((n + lambda) * Eigen::MatrixXd(est.cov));

    SigmaSet<N> set;
    set.points.resize(n, 2 * n + 1);
    set.points.col(0) = est.mean;
    for (int i = 0; i < n; ++i) {
        set.points.col(1 + i) = est.mean + l.col(i);
        set.points.col(1 + n + i) = est.mean - l.col(i);
    }
    set.wm = Eigen::VectorXd::Constant(2 * n + 1, 1.0 / (2.0 * (n + lambda)));
    set.wc = set.wm;
    set.wm(0) = lambda / (n + lambda);
    set.wc(0) = set.wm(0) + (1.0 - params.alpha * params.alpha + params.beta);
    return set;
}

/// Third-degree spherical-radial cubature: 2n equally weighted points.
template <int N>
SigmaSet<N> cubature_points(const Gaussian<N>& est) {
    const int n = est.dim();
    const Eigen::MatrixXd l = linalg::lower_sqrt(static_cast<double>(n) * Eigen::MatrixXd(est.cov));
    SigmaSet<N> set;
    set.points.resize(n, 2 * n);
    for (int i = 0; i < n; ++i) {
        set.points.col(i) = est.mean + l.col(i);
        set.points.col(n + i) = est.mean - l.col(i);
    }
    set.wm = Eigen::VectorXd::Constant(2 * n, 1.0 / (2.0 * n));
    set.wc = set.wm;
    return set;
}

/// Weighted mean and covariance of a point set.
template <int N>
Gaussian<N> reconstruct(const SigmaSet<N>& set) {
    Gaussian<N> out;
    out.mean = set.points * set.wm;
    const auto n = set.points.rows();
    out.cov.setZero(n, n);
    for (Eigen::Index i = 0; i < set.size(); ++i) {
        const Eigen::Matrix<double, N, 1> d = set.points.col(i) - out.mean;
        out.cov += set.wc(i) * d * d.transpose();
    }
    return out;
}

/// Prediction by pushing sigma points through F. Identical to propagate()
/// up to rounding since F is linear.
template <int N>
Gaussian<N> ukf_predict(const Gaussian<N>& est, const Eigen::Matrix<double, N, N>& f,
                        const Eigen::MatrixXd& q, const UnscentedParams& params = {}) {
    SigmaSet<N> set = sigma_points(est, params);
    set.points = (f * set.points).eval();
    Gaussian<N> out = reconstruct(set);
    out.cov += q;
    linalg::symmetrize(out.cov);
    out.epoch = est.epoch + 1;
    return out;
}

inline StateEstimate ukf_predict(const StateEstimate& est, const TransitionModel& model,
                                 const Eigen::MatrixXd& q, const UnscentedParams& params = {}) {
    return ukf_predict<kStateDim>(est, model.F, q, params);
}

/// Innovation statistics needed both by the gate and by the correction.
template <int N>
struct Innovation {
    Eigen::VectorXd y;                            // z - zhat, angular entries wrapped
    Eigen::MatrixXd S;                            // innovation covariance
    Eigen::Matrix<double, N, Eigen::Dynamic> Pxz;  // state/measurement cross-covariance
    Eigen::MatrixXd H;                            // EKF only; empty for sigma-point filters
    Eigen::MatrixXd R;
    std::optional<linalg::SpdSolver> solver;

    Eigen::Index dim() const { return y.size(); }
    double nis() const { return y.size() == 0 ? 0.0 : solver->quadratic_form(y); }
};

template <int N, typename Model>
    requires LinearizableModel<Model, N>
Innovation<N> ekf_innovation(const Gaussian<N>& pred, const Eigen::VectorXd& z, const Model& model,
                             const Eigen::MatrixXd& r) {
    Innovation<N> in;
    in.H = model.jacobian(pred.mean);
    if (in.H.rows() != z.size() || r.rows() != z.size() || r.cols() != z.size() ||
        in.H.cols() != pred.mean.size())
        throw InvalidArgument("ekf_innovation: layout mismatch between z, H and R");
    in.y = model.residual(z, model.predict(pred.mean));
    in.Pxz = pred.cov * in.H.transpose();
    in.S = in.H * in.Pxz + r;
    linalg::symmetrize(in.S);
    in.R = r;
    if (z.size() > 0) in.solver.emplace(in.S);
    return in;
}

/// Unscented / cubature innovation. The predicted measurement of angular
/// channels is averaged through residuals about the first point's projection.
template <int N, typename Model>
    requires MeasurementModel<Model, N>
Innovation<N> sigma_innovation(const SigmaSet<N>& set, const Eigen::VectorXd& z, const Model& model,
                               const Eigen::MatrixXd& r) {
    const Eigen::Index d = z.size();
    if (r.rows() != d || r.cols() != d) throw InvalidArgument("sigma_innovation: R size mismatch");
    const Eigen::Index m = set.size();
    const Eigen::Matrix<double, N, 1> xhat = set.points * set.wm;

    Eigen::MatrixXd zeta(d, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        Eigen::VectorXd zi = model.predict(set.points.col(i));
        if (zi.size() != d) throw InvalidArgument("sigma_innovation: h(x) size mismatch");
        zeta.col(i) = zi;
    }
    const Eigen::VectorXd ref = zeta.col(0);
    Eigen::VectorXd zhat = Eigen::VectorXd::Zero(d);
    for (Eigen::Index i = 0; i < m; ++i) zhat += set.wm(i) * model.residual(zeta.col(i), ref);
    zhat += ref;

    Innovation<N> in;
    in.S = r;
    in.Pxz.setZero(xhat.size(), d);
    for (Eigen::Index i = 0; i < m; ++i) {
        const Eigen::VectorXd dz = model.residual(zeta.col(i), zhat);
        const Eigen::Matrix<double, N, 1> dx = set.points.col(i) - xhat;
        in.S += set.wc(i) * dz * dz.transpose();
        in.Pxz += set.wc(i) * dx * dz.transpose();
    }
    linalg::symmetrize(in.S);
    in.y = model.residual(z, zhat);
    in.R = r;
    if (d > 0) in.solver.emplace(in.S);
    return in;
}

/// Applies K = Pxz S^-1. Joseph form when H is available, P - K S K^T otherwise.
template <int N>
Gaussian<N> correct(const Gaussian<N>& pred, const Innovation<N>& in) {
    if (in.dim() == 0) return pred;
    const Eigen::Matrix<double, N, Eigen::Dynamic> k = in.solver->solve(in.Pxz.transpose()).transpose();
    Gaussian<N> post;
    post.epoch = pred.epoch;
    post.mean = pred.mean + k * in.y;
    if (in.H.size() > 0) {
        const auto n = pred.mean.size();
        const Eigen::Matrix<double, N, N> a =
            Eigen::Matrix<double, N, N>::Identity(n, n) - k * in.H;
        post.cov = a * pred.cov * a.transpose() + k * in.R * k.transpose();
    } else {
        post.cov = pred.cov - k * in.S * k.transpose();
    }
    linalg::symmetrize(post.cov);
    return post;
}

template <int N>
struct UpdateResult {
    Gaussian<N> posterior;
    Eigen::VectorXd innovation;
    Eigen::MatrixXd S;
    double nis = 0.0;
    GateDecision gate = GateDecision::NotGated;
};

template <int N>
UpdateResult<N> finish(const Gaussian<N>& pred, const Innovation<N>& in) {
    return {correct(pred, in), in.y, in.S, in.nis(), GateDecision::NotGated};
}

template <int N, typename Model>
    requires LinearizableModel<Model, N>
UpdateResult<N> ekf_update(const Gaussian<N>& pred, const Eigen::VectorXd& z, const Model& model,
                           const Eigen::MatrixXd& r) {
    return finish(pred, ekf_innovation(pred, z, model, r));
}

template <int N, typename Model>
    requires MeasurementModel<Model, N>
UpdateResult<N> ukf_update(const Gaussian<N>& pred, const Eigen::VectorXd& z, const Model& model,
                           const Eigen::MatrixXd& r, const UnscentedParams& params = {}) {
    return finish(pred, sigma_innovation(sigma_points(pred, params), z, model, r));
}

template <int N, typename Model>
    requires MeasurementModel<Model, N>
UpdateResult<N> ckf_update(const Gaussian<N>& pred, const Eigen::VectorXd& z, const Model& model,
                           const Eigen::MatrixXd& r) {
    return finish(pred, sigma_innovation(cubature_points(pred), z, model, r));
}

/// Runtime dispatch used by the pipeline.
template <int N, typename Model>
    requires LinearizableModel<Model, N>
Innovation<N> innovate(FilterKind kind, const Gaussian<N>& pred, const Eigen::VectorXd& z,
                       const Model& model, const Eigen::MatrixXd& r,
                       const UnscentedParams& params = {}) {
    switch (kind) {
        case FilterKind::Ekf: return ekf_innovation(pred, z, model, r);
        case FilterKind::Ukf: return sigma_innovation(sigma_points(pred, params), z, model, r);
        case FilterKind::Ckf: return sigma_innovation(cubature_points(pred), z, model, r);
    }
    throw InvalidArgument("innovate: unknown filter kind");
}

}  // namespace mmwloc
