#pragma once

// Anchors and the nonlinear observation functions: ToA, AoA azimuth and
// elevation, AoD, LoS Doppler, and odometry. Measurements are stacked in a
// canonical order so that data, predicted measurements, H and R line up:
//
//   for each anchor (ascending id): ToA, AoA_az, AoA_el, AoD   (masked by anchor channels)
//   LoS Doppler
//   odometry speed, odometry heading                           (low-mobility mode only)

#include "mmwloc/error.hpp"
#include "mmwloc/types.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

namespace mmwloc {

enum class Channel : std::uint8_t { Toa, AoaAz, AoaEl, Aod, Doppler, OdoSpeed, OdoHeading };

inline constexpr std::array<Channel, 4> kAnchorChannels = {Channel::Toa, Channel::AoaAz,
                                                           Channel::AoaEl, Channel::Aod};

inline constexpr bool is_angular(Channel c) {
    return c == Channel::AoaAz || c == Channel::AoaEl || c == Channel::Aod ||
           c == Channel::OdoHeading;
}

inline constexpr std::string_view channel_name(Channel c) {
    switch (c) {
        case Channel::Toa: return "toa";
        case Channel::AoaAz: return "aoa_az";
        case Channel::AoaEl: return "aoa_el";
        case Channel::Aod: return "aod";
        case Channel::Doppler: return "doppler";
        case Channel::OdoSpeed: return "odo_speed";
        case Channel::OdoHeading: return "odo_heading";
    }
    return "?";
}

inline std::optional<Channel> parse_channel(std::string_view s) {
    for (auto c : {Channel::Toa, Channel::AoaAz, Channel::AoaEl, Channel::Aod, Channel::Doppler,
                   Channel::OdoSpeed, Channel::OdoHeading})
        if (channel_name(c) == s) return c;
    return std::nullopt;
}

/// Subset of channels, stored as a bitmask.
class ChannelSet {
public:
    constexpr ChannelSet() = default;
    constexpr ChannelSet(std::initializer_list<Channel> cs) {
        for (auto c : cs) insert(c);
    }

    constexpr void insert(Channel c) { bits_ |= bit(c); }
    constexpr void erase(Channel c) { bits_ &= static_cast<std::uint8_t>(~bit(c)); }
    constexpr bool contains(Channel c) const { return (bits_ & bit(c)) != 0; }
    constexpr bool empty() const { return bits_ == 0; }
    constexpr bool operator==(const ChannelSet&) const = default;

    static constexpr ChannelSet all_anchor() {
        return {Channel::Toa, Channel::AoaAz, Channel::AoaEl, Channel::Aod};
    }

private:
    static constexpr std::uint8_t bit(Channel c) {
        return static_cast<std::uint8_t>(1u << static_cast<unsigned>(c));
    }
    std::uint8_t bits_ = 0;
};

enum class AnchorKind { Physical, Virtual };

/// Known-position gNB. The single physical anchor is the LoS anchor and is the
/// only one allowed to carry the Doppler channel.
struct Anchor {
    int id = 1;
    Vec3 position = Vec3::Zero();
    AnchorKind kind = AnchorKind::Virtual;
    ChannelSet channels = ChannelSet::all_anchor();

    bool is_los() const { return kind == AnchorKind::Physical; }
};

using AnchorList = std::vector<Anchor>;

/// Checks ids, finiteness and the single-LoS rule. Returns the anchors sorted by id.
inline AnchorList validated_anchors(AnchorList anchors) {
    if (anchors.empty()) throw InvalidArgument("anchors: list is empty");
    std::sort(anchors.begin(), anchors.end(),
              [](const Anchor& a, const Anchor& b) { return a.id < b.id; });
    int los = 0;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        const auto& a = anchors[i];
        if (a.id < 1) throw InvalidArgument("anchors: ids must be >= 1");
        if (i > 0 && anchors[i - 1].id == a.id)
            throw InvalidArgument("anchors: duplicate id " + std::to_string(a.id));
        if (!a.position.allFinite()) throw InvalidArgument("anchors: non-finite position");
        if (a.is_los()) ++los;
        if (!a.is_los() && a.channels.contains(Channel::Doppler))
            throw InvalidArgument("anchors: Doppler channel on virtual anchor " +
                                  std::to_string(a.id));
        if (a.channels.contains(Channel::OdoSpeed) || a.channels.contains(Channel::OdoHeading))
            throw InvalidArgument("anchors: odometry is not an anchor channel");
    }
    if (los != 1) throw InvalidArgument("anchors: exactly one physical (LoS) anchor required");
    return anchors;
}

inline const Anchor& los_anchor(const AnchorList& anchors) {
    for (const auto& a : anchors)
        if (a.is_los()) return a;
    throw InvalidArgument("anchors: no LoS anchor");
}

inline const Anchor& find_anchor(const AnchorList& anchors, int id) {
    for (const auto& a : anchors)
        if (a.id == id) return a;
    throw InvalidArgument("unknown anchor id " + std::to_string(id));
}

/// Per-channel standard deviations. Units: s, rad, m/s.
struct NoiseProfile {
    double sigma_toa = 3e-9;
    double sigma_az = std::numbers::pi / 180.0;
    double sigma_el = std::numbers::pi / 180.0;
    double sigma_aod = std::numbers::pi / 180.0;
    double sigma_dop = 0.5;
    double sigma_vodo = 0.1;
    double sigma_hodo = 2.0 * std::numbers::pi / 180.0;

    double sigma(Channel c) const {
        switch (c) {
            case Channel::Toa: return sigma_toa;
            case Channel::AoaAz: return sigma_az;
            case Channel::AoaEl: return sigma_el;
            case Channel::Aod: return sigma_aod;
            case Channel::Doppler: return sigma_dop;
            case Channel::OdoSpeed: return sigma_vodo;
            case Channel::OdoHeading: return sigma_hodo;
        }
        return 0.0;
    }
    double variance(Channel c) const { return sigma(c) * sigma(c); }

    NoiseProfile scaled(double k) const {
        return {k * sigma_toa, k * sigma_az, k * sigma_el, k * sigma_aod,
                k * sigma_dop, k * sigma_vodo, k * sigma_hodo};
    }

    bool valid() const {
        for (auto c : {Channel::Toa, Channel::AoaAz, Channel::AoaEl, Channel::Aod,
                       Channel::Doppler, Channel::OdoSpeed, Channel::OdoHeading})
            if (!(sigma(c) > 0.0) || !std::isfinite(sigma(c))) return false;
        return true;
    }
};

/// Anchor id used for channels that do not belong to an anchor (odometry).
inline constexpr int kNoAnchor = 0;

struct LayoutEntry {
    int anchor_id = kNoAnchor;
    Channel channel = Channel::Toa;
    bool operator==(const LayoutEntry&) const = default;
};

using Layout = std::vector<LayoutEntry>;

/// Sort key realizing the canonical stacking order.
inline std::tuple<int, int, int> canonical_key(const LayoutEntry& e) {
    switch (e.channel) {
        case Channel::Doppler: return {1, 0, 0};
        case Channel::OdoSpeed: return {2, 0, 0};
        case Channel::OdoHeading: return {2, 0, 1};
        default: return {0, e.anchor_id, static_cast<int>(e.channel)};
    }
}

inline bool is_canonical(const Layout& layout) {
    for (std::size_t i = 1; i < layout.size(); ++i)
        if (!(canonical_key(layout[i - 1]) < canonical_key(layout[i]))) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Channel functions

namespace detail {
inline constexpr double kDegenerate = 1e-9;
}

/// Maps an angle into (-pi, pi].
inline double wrap_angle(double theta) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double r = std::remainder(theta, two_pi);  // [-pi, pi]
    if (r <= -std::numbers::pi) r += two_pi;
    return r;
}

inline double toa(const Vec3& pos, const Anchor& anchor) {
    const double r = (pos - anchor.position).norm();
    if (r < detail::kDegenerate)
        throw DegenerateGeometry("toa: UE coincides with anchor " + std::to_string(anchor.id));
    return r / kSpeedOfLight;
}

struct AngleOfArrival {
    double azimuth = 0.0;
    double elevation = 0.0;
};

inline AngleOfArrival aoa(const Vec3& pos, const Anchor& anchor) {
    const Vec3 d = pos - anchor.position;
    const double rho = std::hypot(d.x(), d.y());
    if (rho < detail::kDegenerate)
        throw DegenerateGeometry("aoa: zero horizontal separation from anchor " +
                                 std::to_string(anchor.id));
    return {wrap_angle(std::atan2(d.y(), d.x())), std::atan2(d.z(), rho)};
}

/// Bearing from the UE towards the anchor.
inline double aod(const Vec3& pos, const Anchor& anchor) {
    const Vec3 d = anchor.position - pos;
    if (std::hypot(d.x(), d.y()) < detail::kDegenerate)
        throw DegenerateGeometry("aod: zero horizontal separation from anchor " +
                                 std::to_string(anchor.id));
    return wrap_angle(std::atan2(d.y(), d.x()));
}

/// Radial velocity w.r.t. the LoS anchor plus bias (m/s-equivalent).
inline double doppler_los(const Vec3& pos, const Vec3& vel, double bias, const Anchor& anchor) {
    const Vec3 d = pos - anchor.position;
    const double r = d.norm();
    if (r < detail::kDegenerate)
        throw DegenerateGeometry("doppler: UE coincides with LoS anchor");
    return vel.dot(d) / r + bias;
}

struct OdometryReading {
    double speed = 0.0;
    double heading = 0.0;
};

/// Horizontal speed and heading. Heading is 0 when stationary.
inline OdometryReading odometry(const StateVector& x) {
    const double vx = x(idx::kVx), vy = x(idx::kVy);
    const double s = std::hypot(vx, vy);
    if (s < 1e-9) return {s, 0.0};
    return {s, std::atan2(vy, vx)};
}

// ---------------------------------------------------------------------------
// Stacking

/// Canonical layout for a set of anchors. Odometry rows are appended only in
/// low-mobility mode.
inline Layout canonical_layout(const AnchorList& anchors, MobilityMode mode) {
    std::vector<const Anchor*> sorted;
    for (const auto& a : anchors) sorted.push_back(&a);
    std::sort(sorted.begin(), sorted.end(),
              [](const Anchor* a, const Anchor* b) { return a->id < b->id; });
    Layout out;
    for (const Anchor* a : sorted)
        for (auto c : kAnchorChannels)
            if (a->channels.contains(c)) out.push_back({a->id, c});
    for (const Anchor* a : sorted)
        if (a->is_los() && a->channels.contains(Channel::Doppler))
            out.push_back({a->id, Channel::Doppler});
    if (mode == MobilityMode::LowMobility) {
        out.push_back({kNoAnchor, Channel::OdoSpeed});
        out.push_back({kNoAnchor, Channel::OdoHeading});
    }
    return out;
}

/// h(x) evaluated entry-by-entry along an explicit layout.
inline Eigen::VectorXd evaluate(const StateVector& x, const AnchorList& anchors,
                                const Layout& layout) {
    Eigen::VectorXd z(static_cast<Eigen::Index>(layout.size()));
    const Vec3 p = position_of(x);
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const auto& e = layout[i];
        double v = 0.0;
        switch (e.channel) {
            case Channel::Toa: v = toa(p, find_anchor(anchors, e.anchor_id)); break;
            case Channel::AoaAz: v = aoa(p, find_anchor(anchors, e.anchor_id)).azimuth; break;
            case Channel::AoaEl: {
                const Anchor& a = find_anchor(anchors, e.anchor_id);
                const Vec3 d = p - a.position;
                if (d.norm() < detail::kDegenerate)
                    throw DegenerateGeometry("aoa: UE coincides with anchor " +
                                             std::to_string(a.id));
                v = std::atan2(d.z(), std::hypot(d.x(), d.y()));
                break;
            }
            case Channel::Aod: v = aod(p, find_anchor(anchors, e.anchor_id)); break;
            case Channel::Doppler:
                v = doppler_los(p, velocity_of(x), x(idx::kBias),
                                find_anchor(anchors, e.anchor_id));
                break;
            case Channel::OdoSpeed: v = odometry(x).speed; break;
            case Channel::OdoHeading: v = odometry(x).heading; break;
        }
        z(static_cast<Eigen::Index>(i)) = v;
    }
    return z;
}

struct StackedMeasurement {
    Eigen::VectorXd z;
    Layout layout;
};

inline StackedMeasurement stack_predicted(const StateVector& x, const AnchorList& anchors,
                                          MobilityMode mode) {
    if (anchors.empty()) throw InvalidArgument("stack_predicted: no anchors");
    (void)los_anchor(anchors);
    Layout layout = canonical_layout(anchors, mode);
    return {evaluate(x, anchors, layout), std::move(layout)};
}

/// Analytic d x 7 Jacobian of evaluate() along the layout.
inline Eigen::MatrixXd jacobian(const StateVector& x, const AnchorList& anchors,
                                const Layout& layout) {
    using detail::kDegenerate;
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(layout.size()), kStateDim);
    const Vec3 p = position_of(x);
    const Vec3 v = velocity_of(x);
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        const auto& e = layout[i];
        if (e.channel == Channel::OdoSpeed || e.channel == Channel::OdoHeading) {
            const double s2 = v.x() * v.x() + v.y() * v.y();
            const double s = std::sqrt(s2);
            if (s < 1e-9) continue;
            if (e.channel == Channel::OdoSpeed) {
                h(row, idx::kVx) = v.x() / s;
                h(row, idx::kVy) = v.y() / s;
            } else {
                h(row, idx::kVx) = -v.y() / s2;
                h(row, idx::kVy) = v.x() / s2;
            }
            continue;
        }
        const Anchor& a = find_anchor(anchors, e.anchor_id);
        const Vec3 d = p - a.position;
        const double r2 = d.squaredNorm();
        const double r = std::sqrt(r2);
        const double rho2 = d.x() * d.x() + d.y() * d.y();
        const double rho = std::sqrt(rho2);
        switch (e.channel) {
            case Channel::Toa:
                if (r < kDegenerate) throw DegenerateGeometry("jacobian: toa degenerate");
                h.block<1, 3>(row, idx::kX) = d.transpose() / (kSpeedOfLight * r);
                break;
            case Channel::AoaAz:
            case Channel::Aod:
                if (rho < kDegenerate) throw DegenerateGeometry("jacobian: bearing degenerate");
                h(row, idx::kX) = -d.y() / rho2;
                h(row, idx::kY) = d.x() / rho2;
                break;
            case Channel::AoaEl:
                if (rho < kDegenerate) throw DegenerateGeometry("jacobian: elevation degenerate");
                h(row, idx::kX) = -d.z() * d.x() / (rho * r2);
                h(row, idx::kY) = -d.z() * d.y() / (rho * r2);
                h(row, idx::kZ) = rho / r2;
                break;
            case Channel::Doppler: {
                if (r < kDegenerate) throw DegenerateGeometry("jacobian: doppler degenerate");
                const Vec3 u = d / r;
                h.block<1, 3>(row, idx::kX) = (v - v.dot(u) * u).transpose() / r;
                h.block<1, 3>(row, idx::kVx) = u.transpose();
                h(row, idx::kBias) = 1.0;
                break;
            }
            default: break;
        }
    }
    return h;
}

inline Eigen::MatrixXd jacobian(const StateVector& x, const AnchorList& anchors,
                                MobilityMode mode) {
    return jacobian(x, anchors, canonical_layout(anchors, mode));
}

/// z - zhat with angular components wrapped into (-pi, pi].
inline Eigen::VectorXd residual(const Eigen::VectorXd& z, const Eigen::VectorXd& zhat,
                                const Layout& layout) {
    if (z.size() != zhat.size() || static_cast<std::size_t>(z.size()) != layout.size())
        throw InvalidArgument("residual: dimension mismatch");
    Eigen::VectorXd y = z - zhat;
    for (std::size_t i = 0; i < layout.size(); ++i)
        if (is_angular(layout[i].channel))
            y(static_cast<Eigen::Index>(i)) = wrap_angle(y(static_cast<Eigen::Index>(i)));
    return y;
}

inline Eigen::MatrixXd assemble_R(const NoiseProfile& profile, const Layout& layout) {
    Eigen::VectorXd d(static_cast<Eigen::Index>(layout.size()));
    for (std::size_t i = 0; i < layout.size(); ++i)
        d(static_cast<Eigen::Index>(i)) = profile.variance(layout[i].channel);
    return d.asDiagonal();
}

// ---------------------------------------------------------------------------
// Observed data

struct Measurement {
    int anchor_id = kNoAnchor;
    Channel channel = Channel::Toa;
    double value = 0.0;
    double variance = 1.0;
};

/// One epoch of observations in canonical order.
struct MeasurementBundle {
    std::size_t epoch = 0;
    std::vector<Measurement> entries;
    double doppler_spread = 0.0;

    Layout layout() const {
        Layout out;
        out.reserve(entries.size());
        for (const auto& m : entries) out.push_back({m.anchor_id, m.channel});
        return out;
    }

    Eigen::VectorXd values() const {
        Eigen::VectorXd z(static_cast<Eigen::Index>(entries.size()));
        for (std::size_t i = 0; i < entries.size(); ++i)
            z(static_cast<Eigen::Index>(i)) = entries[i].value;
        return z;
    }

    bool has(Channel c) const {
        return std::any_of(entries.begin(), entries.end(),
                           [c](const Measurement& m) { return m.channel == c; });
    }
};

using MeasurementStream = std::vector<MeasurementBundle>;

inline void validate_bundle(const MeasurementBundle& b) {
    if (!is_canonical(b.layout()))
        throw ValidationError("bundle " + std::to_string(b.epoch) + ": entries not in canonical order");
    for (const auto& m : b.entries)
        if (!(m.variance > 0.0) || !std::isfinite(m.value))
            throw ValidationError("bundle " + std::to_string(b.epoch) +
                                  ": non-positive variance or non-finite value");
    if (!(b.doppler_spread >= 0.0))
        throw ValidationError("bundle " + std::to_string(b.epoch) + ": negative doppler spread");
}

/// Entries of `b` whose channel passes `keep`, order preserved.
template <typename Pred>
MeasurementBundle filter_entries(const MeasurementBundle& b, Pred keep) {
    MeasurementBundle out;
    out.epoch = b.epoch;
    out.doppler_spread = b.doppler_spread;
    for (const auto& m : b.entries)
        if (keep(m)) out.entries.push_back(m);
    return out;
}

}  // namespace mmwloc
