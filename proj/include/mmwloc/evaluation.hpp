#pragma once

// Trajectory error metrics. Positions share the anchor frame, so no
// alignment is applied before comparing.

#include "mmwloc/error.hpp"
#include "mmwloc/linalg.hpp"
#include "mmwloc/types.hpp"

#include <cmath>
#include <vector>

namespace mmwloc {

using Trajectory = std::vector<Vec3>;

namespace detail {
inline void check_pair(const Trajectory& est, const Trajectory& truth, const char* what) {
    if (est.size() != truth.size())
        throw InvalidArgument(std::string(what) + ": trajectory length mismatch");
    if (est.empty()) throw InvalidArgument(std::string(what) + ": empty trajectory");
}
}  // namespace detail

inline std::vector<double> position_errors(const Trajectory& est, const Trajectory& truth) {
    detail::check_pair(est, truth, "position_errors");
    std::vector<double> e(est.size());
    for (std::size_t k = 0; k < est.size(); ++k) e[k] = (est[k] - truth[k]).norm();
    return e;
}

/// Mean Euclidean position error.
inline double ate(const Trajectory& est, const Trajectory& truth) {
    double sum = 0.0;
    for (double e : position_errors(est, truth)) sum += e;
    return sum / static_cast<double>(est.size());
}

inline double rmse(const Trajectory& est, const Trajectory& truth) {
    double sum = 0.0;
    for (double e : position_errors(est, truth)) sum += e * e;
    return std::sqrt(sum / static_cast<double>(est.size()));
}

/// Mean norm of the displacement error over `delta` epochs.
inline double rpe(const Trajectory& est, const Trajectory& truth, std::size_t delta = 1) {
    if (est.size() != truth.size()) throw InvalidArgument("rpe: trajectory length mismatch");
    if (delta < 1 || est.size() < delta + 1) throw InvalidArgument("rpe: trajectory too short");
    double sum = 0.0;
    const std::size_t n = est.size() - delta;
    for (std::size_t k = 0; k < n; ++k)
        sum += ((est[k + delta] - est[k]) - (truth[k + delta] - truth[k])).norm();
    return sum / static_cast<double>(n);
}

enum class NeesSubspace { Position, PlanarPosition, Full };

struct NeesResult {
    std::vector<double> series;
    double mean = 0.0;
};

/// e^T P^-1 e restricted to the chosen subspace of each epoch.
inline NeesResult nees(const std::vector<StateEstimate>& est, const std::vector<StateVector>& truth,
                       NeesSubspace subspace = NeesSubspace::Position) {
    if (est.size() != truth.size()) throw InvalidArgument("nees: length mismatch");
    if (est.empty()) throw InvalidArgument("nees: empty series");
    const int dim = subspace == NeesSubspace::Full ? kStateDim
                    : subspace == NeesSubspace::Position ? 3 : 2;
    NeesResult out;
    out.series.reserve(est.size());
    for (std::size_t k = 0; k < est.size(); ++k) {
        const Eigen::VectorXd e = (est[k].mean - truth[k]).head(dim);
        const Eigen::MatrixXd p = est[k].cov.topLeftCorner(dim, dim);
        out.series.push_back(linalg::SpdSolver(p).quadratic_form(e));
        out.mean += out.series.back();
    }
    out.mean /= static_cast<double>(est.size());
    return out;
}

/// Aggregated per-trajectory accuracy.
struct MetricReport {
    double ate = 0.0;
    double rpe = 0.0;
    double nees_mean = 0.0;
    double rmse = 0.0;
    std::vector<double> nees_series;
    std::vector<double> position_errors;
};

inline MetricReport evaluate_trajectory(const std::vector<StateEstimate>& est,
                                        const std::vector<StateVector>& truth,
                                        NeesSubspace subspace = NeesSubspace::Position) {
    if (est.size() != truth.size()) throw InvalidArgument("evaluate: length mismatch");
    Trajectory pe, pt;
    for (std::size_t k = 0; k < est.size(); ++k) {
        pe.push_back(position_of(est[k].mean));
        pt.push_back(position_of(truth[k]));
    }
    MetricReport r;
    r.position_errors = position_errors(pe, pt);
    r.ate = ate(pe, pt);
    r.rmse = rmse(pe, pt);
    r.rpe = pe.size() >= 2 ? rpe(pe, pt, 1) : 0.0;
    auto n = nees(est, truth, subspace);
    r.nees_series = std::move(n.series);
    r.nees_mean = n.mean;
    return r;
}

}  // namespace mmwloc
