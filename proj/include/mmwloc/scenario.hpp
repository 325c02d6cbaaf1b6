#pragma once

// Synthetic ground truth and measurement streams, plus the CSV exchange
// format used to ingest external trajectories.
//
// CSV schema (header row, comma separated, '.' decimal, units m, m/s, s, rad):
//   epoch,true_x,true_y,true_z,true_vx,true_vy,true_vz,true_b,doppler_spread,
//   toa_<id>,aoa_az_<id>,aoa_el_<id>,aod_<id> (per anchor),doppler,odo_speed,odo_heading
// Measurement columns are optional; an empty cell masks that channel for the epoch.

#include "mmwloc/error.hpp"
#include "mmwloc/measurement.hpp"
#include "mmwloc/types.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace mmwloc {

enum class TrajectoryKind { PedestrianWaypoint, VehicularLane, CustomWaypoints };
enum class SpeedSchedule { Constant, Smooth, Ramp };

inline std::string_view to_string(TrajectoryKind k) {
    switch (k) {
        case TrajectoryKind::PedestrianWaypoint: return "pedestrian-waypoint";
        case TrajectoryKind::VehicularLane: return "vehicular-lane";
        case TrajectoryKind::CustomWaypoints: return "custom-waypoints";
    }
    return "?";
}

inline std::string_view to_string(SpeedSchedule s) {
    switch (s) {
        case SpeedSchedule::Constant: return "constant";
        case SpeedSchedule::Smooth: return "smooth";
        case SpeedSchedule::Ramp: return "ramp";
    }
    return "?";
}

struct TrajectoryProfile {
    TrajectoryKind kind = TrajectoryKind::PedestrianWaypoint;
    SpeedSchedule schedule = SpeedSchedule::Smooth;
    double speed_min = 1.0;
    double speed_max = 1.6;
    /// Period of the smooth speed oscillation (s).
    double speed_period = 60.0;
    std::size_t duration = 200;
    double dt = 1.0;
    std::vector<Vec3> waypoints;
    /// Heading random perturbation (rad / sqrt(s)).
    double heading_noise = 0.0;
    /// Heading slew limit (rad/s); 0 turns instantly towards the next waypoint.
    double max_turn_rate = 0.0;
    /// Doppler spread per unit speed (1/m * m/s).
    double doppler_spread_coeff = 0.1;
    /// Per-epoch standard deviation of the true bias random walk (m/s).
    double bias_walk_sigma = 0.01;
    double initial_bias = 0.0;

    void validate() const {
        if (duration < 2) throw ValidationError("scenario.trajectory.duration: must be >= 2");
        if (!(dt > 0.0) || !std::isfinite(dt))
            throw ValidationError("scenario.trajectory.dt: must be positive");
        if (waypoints.size() < 2)
            throw ValidationError("scenario.trajectory.waypoints: need at least 2");
        for (const auto& w : waypoints)
            if (!w.allFinite()) throw ValidationError("scenario.trajectory.waypoints: non-finite");
        if (!(speed_min >= 0.0 && speed_min <= speed_max))
            throw ValidationError(
                "scenario.trajectory.speed_min, scenario.trajectory.speed_max: need 0 <= min <= max");
        if (kind == TrajectoryKind::PedestrianWaypoint && speed_max > 2.0)
            throw ValidationError("scenario.trajectory.speed_max: pedestrian speed must be <= 2 m/s");
        if (kind == TrajectoryKind::VehicularLane && speed_max > 20.0)
            throw ValidationError("scenario.trajectory.speed_max: vehicular speed must be <= 20 m/s");
        if (!(speed_period > 0.0)) throw ValidationError("scenario.trajectory.speed_period: must be positive");
        if (heading_noise < 0 || max_turn_rate < 0 || doppler_spread_coeff < 0 || bias_walk_sigma < 0)
            throw ValidationError("scenario.trajectory: noise and rate parameters must be >= 0");
    }
};

struct GroundTruth {
    double dt = 1.0;
    std::vector<StateVector> states;
    std::vector<double> doppler_spread;

    std::size_t size() const { return states.size(); }
};

struct OutlierModel {
    double rate = 0.0;
    double magnitude = 10.0;
    ChannelSet channels = ChannelSet::all_anchor();
};

struct SynthesisConfig {
    NoiseProfile noise;
    /// Multiplies every sigma at synthesis time; 0 yields noiseless data.
    double noise_scale = 1.0;
    OutlierModel outliers;
    bool odometry = true;

    void validate() const {
        if (!noise.valid()) throw ValidationError("scenario.noise: all sigmas must be positive");
        if (!(noise_scale >= 0.0)) throw ValidationError("scenario.noise_scale: must be >= 0");
        if (!(outliers.rate >= 0.0 && outliers.rate <= 1.0))
            throw ValidationError("scenario.outliers.rate: must lie in [0, 1]");
        if (!(outliers.magnitude >= 0.0))
            throw ValidationError("scenario.outliers.magnitude: must be >= 0");
    }
};

namespace detail {
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint32_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      stream};
    return std::mt19937_64(seq);
}
}  // namespace detail

/// Waypoint-following constant-velocity path. Positions integrate the
/// per-epoch velocity exactly: p[k+1] = p[k] + dt * v[k]. Waypoints are
/// visited cyclically.
inline GroundTruth gen_trajectory(const TrajectoryProfile& prof, std::uint64_t seed) {
    prof.validate();
    auto rng = detail::make_rng(seed, 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 2.0 * std::numbers::pi);
    const double phase = uniform(rng);

    const double mid = 0.5 * (prof.speed_min + prof.speed_max);
    const double half = 0.5 * (prof.speed_max - prof.speed_min);
    auto speed_at = [&](std::size_t k) {
        switch (prof.schedule) {
            case SpeedSchedule::Constant: return mid;
            case SpeedSchedule::Smooth:
                return mid + half * std::sin(2.0 * std::numbers::pi * k * prof.dt / prof.speed_period + phase);
            case SpeedSchedule::Ramp:
                return prof.speed_min + (prof.speed_max - prof.speed_min) * static_cast<double>(k) /
                                            static_cast<double>(prof.duration - 1);
        }
        return mid;
    };

    GroundTruth gt;
    gt.dt = prof.dt;
    gt.states.reserve(prof.duration);
    gt.doppler_spread.reserve(prof.duration);

    Vec3 p = prof.waypoints[0];
    std::size_t target = 1;
    double bias = prof.initial_bias;
    std::optional<double> heading;
    for (std::size_t k = 0; k < prof.duration; ++k) {
        const double s = std::clamp(speed_at(k), prof.speed_min, prof.speed_max);
        const double capture =
            std::max(s * prof.dt, prof.max_turn_rate > 0.0 ? s / prof.max_turn_rate : 0.0);
        for (std::size_t guard = 0; guard < prof.waypoints.size(); ++guard) {
            if ((prof.waypoints[target] - p).norm() > capture) break;
            target = (target + 1) % prof.waypoints.size();
        }
        const Vec3 delta = prof.waypoints[target] - p;
        const double dist = delta.norm();
        const double desired = std::atan2(delta.y(), delta.x());
        if (!heading) {
            heading = desired;
        } else {
            double turn = wrap_angle(desired - *heading);
            if (prof.max_turn_rate > 0.0) {
                const double lim = prof.max_turn_rate * prof.dt;
                turn = std::clamp(turn, -lim, lim);
            }
            *heading = wrap_angle(*heading + turn);
        }
        if (prof.heading_noise > 0.0 && k > 0)
            *heading = wrap_angle(*heading + prof.heading_noise * std::sqrt(prof.dt) * normal(rng));

        const double horiz = dist > 0.0 ? std::hypot(delta.x(), delta.y()) / dist : 1.0;
        const double vert = dist > 0.0 ? delta.z() / dist : 0.0;
        const Vec3 v(s * horiz * std::cos(*heading), s * horiz * std::sin(*heading), s * vert);

        gt.states.push_back(make_state(p, v, bias));
        gt.doppler_spread.push_back(prof.doppler_spread_coeff * s);
        p += prof.dt * v;
        if (prof.bias_walk_sigma > 0.0) bias += prof.bias_walk_sigma * normal(rng);
    }
    return gt;
}

/// Noisy observations of the true states. With noise_scale = 0 the stream
/// equals evaluate() on the truth exactly.
inline MeasurementStream synthesize(const GroundTruth& truth, const AnchorList& anchors,
                                    const SynthesisConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const AnchorList sorted = validated_anchors(anchors);
    auto rng = detail::make_rng(seed, 2);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    const Layout layout = canonical_layout(
        sorted, cfg.odometry ? MobilityMode::LowMobility : MobilityMode::HighMobility);

    MeasurementStream out;
    out.reserve(truth.size());
    for (std::size_t k = 0; k < truth.size(); ++k) {
        Eigen::VectorXd z;
        try {
            z = evaluate(truth.states[k], sorted, layout);
        } catch (const DegenerateGeometry& e) {
            throw DegenerateGeometry("synthesize: epoch " + std::to_string(k) + ": " + e.what());
        }
        MeasurementBundle b;
        b.epoch = k;
        b.doppler_spread = k < truth.doppler_spread.size() ? truth.doppler_spread[k] : 0.0;
        for (std::size_t i = 0; i < layout.size(); ++i) {
            const auto& e = layout[i];
            const bool outlier = cfg.outliers.channels.contains(e.channel) &&
                                 uniform(rng) < cfg.outliers.rate;
            const double sigma = cfg.noise.sigma(e.channel) * cfg.noise_scale *
                                 (outlier ? cfg.outliers.magnitude : 1.0);
            double v = z(static_cast<Eigen::Index>(i));
            const double n = normal(rng);
            if (sigma > 0.0) v += sigma * n;
            if (is_angular(e.channel)) v = wrap_angle(v);
            b.entries.push_back({e.anchor_id, e.channel, v, cfg.noise.variance(e.channel)});
        }
        out.push_back(std::move(b));
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string column_name(const LayoutEntry& e) {
    switch (e.channel) {
        case Channel::Doppler:
        case Channel::OdoSpeed:
        case Channel::OdoHeading: return std::string(channel_name(e.channel));
        default: return std::string(channel_name(e.channel)) + "_" + std::to_string(e.anchor_id);
    }
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline double parse_double(std::string_view s, std::size_t line, const std::string& column) {
    s = trim(s);
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v))
        throw ParseError("column '" + column + "': cannot parse '" + std::string(s) + "'", line);
    return v;
}

}  // namespace detail

inline const std::vector<std::string>& truth_columns() {
    static const std::vector<std::string> cols = {"true_x",  "true_y",  "true_z", "true_vx",
                                                  "true_vy", "true_vz", "true_b"};
    return cols;
}

/// Writes ground truth and the stream. Measurement columns follow the union
/// of layouts seen in the stream, in canonical order.
inline void write_csv(std::ostream& os, const GroundTruth& truth, const MeasurementStream& stream) {
    if (truth.size() != stream.size())
        throw InvalidArgument("write_csv: truth and stream lengths differ");
    Layout columns;
    for (const auto& b : stream)
        for (const auto& m : b.entries) {
            const LayoutEntry e{m.anchor_id, m.channel};
            if (std::find(columns.begin(), columns.end(), e) == columns.end()) columns.push_back(e);
        }
    std::sort(columns.begin(), columns.end(),
              [](const LayoutEntry& a, const LayoutEntry& b) { return canonical_key(a) < canonical_key(b); });

    os << "epoch";
    for (const auto& c : truth_columns()) os << ',' << c;
    os << ",doppler_spread";
    for (const auto& c : columns) os << ',' << detail::column_name(c);
    os << '\n';
    for (std::size_t k = 0; k < stream.size(); ++k) {
        const auto& b = stream[k];
        os << b.epoch;
        for (int i = 0; i < kStateDim; ++i) os << ',' << detail::format_double(truth.states[k](i));
        os << ',' << detail::format_double(b.doppler_spread);
        for (const auto& c : columns) {
            os << ',';
            for (const auto& m : b.entries)
                if (m.anchor_id == c.anchor_id && m.channel == c.channel) {
                    os << detail::format_double(m.value);
                    break;
                }
        }
        os << '\n';
    }
}

struct LoadedData {
    GroundTruth truth;
    MeasurementStream stream;
};

/// Parses the CSV schema. Measurement variances come from `profile`; Doppler
/// entries are attributed to the LoS anchor.
inline LoadedData load_csv(std::istream& is, const AnchorList& anchors, const NoiseProfile& profile,
                           double dt = 1.0) {
    const AnchorList sorted = validated_anchors(anchors);
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(is, line)) throw ParseError("missing header row", 1);
    ++lineno;
    const auto header_views = detail::split(line, ',');
    std::vector<std::string> header;
    for (auto h : header_views) header.emplace_back(detail::trim(h));

    enum class Kind { Epoch, Truth, Spread, Meas };
    struct Column {
        Kind kind;
        int truth_index = 0;
        LayoutEntry entry;
    };
    std::vector<Column> cols;
    std::vector<bool> seen_truth(kStateDim, false);
    bool seen_epoch = false;
    for (const auto& h : header) {
        if (h == "epoch") {
            cols.push_back({Kind::Epoch, 0, {}});
            seen_epoch = true;
            continue;
        }
        if (h == "doppler_spread") {
            cols.push_back({Kind::Spread, 0, {}});
            continue;
        }
        const auto& tc = truth_columns();
        auto it = std::find(tc.begin(), tc.end(), h);
        if (it != tc.end()) {
            const int i = static_cast<int>(it - tc.begin());
            cols.push_back({Kind::Truth, i, {}});
            seen_truth[i] = true;
            continue;
        }
        if (h == "doppler") {
            cols.push_back({Kind::Meas, 0, {los_anchor(sorted).id, Channel::Doppler}});
            continue;
        }
        if (h == "odo_speed" || h == "odo_heading") {
            cols.push_back({Kind::Meas, 0, {kNoAnchor, *parse_channel(h)}});
            continue;
        }
        const auto us = h.rfind('_');
        std::optional<Channel> ch;
        int id = 0;
        if (us != std::string::npos) {
            ch = parse_channel(std::string_view(h).substr(0, us));
            const auto idpart = std::string_view(h).substr(us + 1);
            auto res = std::from_chars(idpart.data(), idpart.data() + idpart.size(), id);
            if (res.ec != std::errc() || res.ptr != idpart.data() + idpart.size()) ch.reset();
        }
        if (!ch || std::find(kAnchorChannels.begin(), kAnchorChannels.end(), *ch) == kAnchorChannels.end())
            throw ParseError("unknown column '" + h + "'", 1);
        (void)find_anchor(sorted, id);
        cols.push_back({Kind::Meas, 0, {id, *ch}});
    }
    if (!seen_epoch) throw ParseError("missing column 'epoch'", 1);
    for (int i = 0; i < kStateDim; ++i)
        if (!seen_truth[i]) throw ParseError("missing column '" + truth_columns()[i] + "'", 1);

    LoadedData out;
    out.truth.dt = dt;
    std::optional<long long> prev_epoch;
    while (std::getline(is, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split(line, ',');
        if (fields.size() != cols.size())
            throw ParseError("expected " + std::to_string(cols.size()) + " fields, got " +
                                 std::to_string(fields.size()),
                             lineno);
        StateVector x = StateVector::Zero();
        MeasurementBundle b;
        long long epoch = 0;
        for (std::size_t i = 0; i < cols.size(); ++i) {
            const auto cell = detail::trim(fields[i]);
            const auto& c = cols[i];
            switch (c.kind) {
                case Kind::Epoch: {
                    auto res = std::from_chars(cell.data(), cell.data() + cell.size(), epoch);
                    if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || epoch < 0)
                        throw ParseError("column 'epoch': invalid value '" + std::string(cell) + "'", lineno);
                    break;
                }
                case Kind::Truth:
                    x(c.truth_index) = detail::parse_double(cell, lineno, header[i]);
                    break;
                case Kind::Spread:
                    b.doppler_spread = cell.empty() ? 0.0 : detail::parse_double(cell, lineno, header[i]);
                    if (b.doppler_spread < 0.0)
                        throw ParseError("column 'doppler_spread': negative value", lineno);
                    break;
                case Kind::Meas:
                    if (cell.empty()) break;
                    b.entries.push_back({c.entry.anchor_id, c.entry.channel,
                                         detail::parse_double(cell, lineno, header[i]),
                                         profile.variance(c.entry.channel)});
                    break;
            }
        }
        if (prev_epoch && epoch <= *prev_epoch)
            throw ValidationError("line " + std::to_string(lineno) + ": epochs must be strictly increasing");
        prev_epoch = epoch;
        b.epoch = static_cast<std::size_t>(epoch);
        std::stable_sort(b.entries.begin(), b.entries.end(), [](const Measurement& a, const Measurement& c) {
            return canonical_key({a.anchor_id, a.channel}) < canonical_key({c.anchor_id, c.channel});
        });
        out.truth.states.push_back(x);
        out.truth.doppler_spread.push_back(b.doppler_spread);
        out.stream.push_back(std::move(b));
    }
    if (out.stream.empty()) throw InvalidArgument("load_csv: empty measurement stream");
    return out;
}

inline LoadedData load_csv(const std::string& path, const AnchorList& anchors,
                           const NoiseProfile& profile, double dt = 1.0) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open '" + path + "'");
    return load_csv(f, anchors, profile, dt);
}

}  // namespace mmwloc
