#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <string_view>

namespace mmwloc {

inline constexpr int kStateDim = 7;

/// [x y z vx vy vz b]: position (m), velocity (m/s), Doppler bias (m/s-equivalent).
using StateVector = Eigen::Matrix<double, kStateDim, 1>;
using StateMatrix = Eigen::Matrix<double, kStateDim, kStateDim>;
using Vec3 = Eigen::Vector3d;

/// Offsets into StateVector.
namespace idx {
inline constexpr int kX = 0;
inline constexpr int kY = 1;
inline constexpr int kZ = 2;
inline constexpr int kVx = 3;
inline constexpr int kVy = 4;
inline constexpr int kVz = 5;
inline constexpr int kBias = 6;
}  // namespace idx

inline constexpr double kSpeedOfLight = 299'792'458.0;

inline Vec3 position_of(const StateVector& x) { return x.segment<3>(idx::kX); }
inline Vec3 velocity_of(const StateVector& x) { return x.segment<3>(idx::kVx); }

inline StateVector make_state(const Vec3& p, const Vec3& v, double bias) {
    StateVector x;
    x << p, v, bias;
    return x;
}

/// Doppler bias carried in m/s converted to a frequency offset at carrier fc (Hz).
inline double bias_to_hz(double bias_ms, double carrier_hz) {
    return bias_ms * carrier_hz / kSpeedOfLight;
}

/// Gaussian belief of dimension N: mean, covariance and the epoch it refers to.
template <int N>
struct Gaussian {
    Eigen::Matrix<double, N, 1> mean;
    Eigen::Matrix<double, N, N> cov;
    std::size_t epoch = 0;

    int dim() const { return static_cast<int>(mean.size()); }
};

using StateEstimate = Gaussian<kStateDim>;

inline StateEstimate make_estimate(const StateVector& mean, const StateMatrix& cov,
                                   std::size_t epoch = 0) {
    return {mean, cov, epoch};
}

enum class GateDecision { Accepted, Rejected, Forced, NotGated, Failed };

inline std::string_view to_string(GateDecision g) {
    switch (g) {
        case GateDecision::Accepted: return "accept";
        case GateDecision::Rejected: return "reject";
        case GateDecision::Forced: return "forced";
        case GateDecision::NotGated: return "ungated";
        case GateDecision::Failed: return "failed";
    }
    return "?";
}

enum class MobilityMode { LowMobility, HighMobility, OutOfRange };

inline std::string_view to_string(MobilityMode m) {
    switch (m) {
        case MobilityMode::LowMobility: return "LM";
        case MobilityMode::HighMobility: return "HM";
        case MobilityMode::OutOfRange: return "OOR";
    }
    return "?";
}

}  // namespace mmwloc
