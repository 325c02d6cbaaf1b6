#pragma once

// JSON configuration: scenario (anchors, trajectory, synthesis) plus pipeline
// settings. A config may start from a named preset and override any key.
// Errors name the offending field path, e.g. "pipeline.gating.confidence".

#include "mmwloc/error.hpp"
#include "mmwloc/measurement.hpp"
#include "mmwloc/pipeline.hpp"
#include "mmwloc/scenario.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

namespace mmwloc {

struct ScenarioConfig {
    std::string name = "pedestrian";
    AnchorList anchors;
    TrajectoryProfile trajectory;
    SynthesisConfig synthesis;

    void validate() const {
        try {
            (void)validated_anchors(anchors);
        } catch (const InvalidArgument& e) {
            throw ValidationError(std::string("scenario.") + e.what());
        }
        trajectory.validate();
        synthesis.validate();
    }
};

struct Config {
    ScenarioConfig scenario;
    PipelineConfig pipeline;
    std::uint64_t seed = 0;

    void validate() const {
        scenario.validate();
        pipeline.validate();
        if (pipeline.dt != scenario.trajectory.dt)
            throw ValidationError("pipeline.dt, scenario.trajectory.dt: must agree");
    }
};

// ---------------------------------------------------------------------------
// Presets

inline Anchor make_anchor(int id, Vec3 pos, AnchorKind kind) {
    Anchor a;
    a.id = id;
    a.position = pos;
    a.kind = kind;
    a.channels = ChannelSet::all_anchor();
    if (kind == AnchorKind::Physical) a.channels.insert(Channel::Doppler);
    return a;
}

/// Pedestrian loop around a 30 m x 20 m block, one physical and two virtual gNBs.
inline Config pedestrian_preset() {
    Config c;
    c.scenario.name = "pedestrian";
    c.scenario.anchors = {make_anchor(1, {0, 0, 10}, AnchorKind::Physical),
                          make_anchor(2, {45, 0, 8}, AnchorKind::Virtual),
                          make_anchor(3, {20, 40, 8}, AnchorKind::Virtual)};
    auto& t = c.scenario.trajectory;
    t.kind = TrajectoryKind::PedestrianWaypoint;
    t.schedule = SpeedSchedule::Smooth;
    t.speed_min = 1.0;
    t.speed_max = 1.6;
    t.duration = 200;
    t.waypoints = {{5, 5, 0}, {35, 5, 0}, {35, 25, 0}, {5, 25, 0}};
    t.heading_noise = 0.05;
    t.max_turn_rate = 0.3;
    c.scenario.synthesis.odometry = true;
    c.pipeline.process = {0.01, 0.01, 0.05, 0.01, 1e-4, 1.0};
    return c;
}

/// Vehicle circulating a 200 m x 100 m lane loop at about 12 m/s, with a
/// virtual anchor close to the southern lane.
inline Config vehicular_preset() {
    Config c;
    c.scenario.name = "vehicular";
    c.scenario.anchors = {make_anchor(1, {100, 50, 15}, AnchorKind::Physical),
                          make_anchor(2, {100, -12, 10}, AnchorKind::Virtual),
                          make_anchor(3, {220, 120, 10}, AnchorKind::Virtual)};
    auto& t = c.scenario.trajectory;
    t.kind = TrajectoryKind::VehicularLane;
    t.schedule = SpeedSchedule::Smooth;
    t.speed_min = 11.0;
    t.speed_max = 13.0;
    t.duration = 200;
    t.waypoints = {{0, 0, 0}, {200, 0, 0}, {200, 100, 0}, {0, 100, 0}};
    t.heading_noise = 0.01;
    t.max_turn_rate = 0.2;
    c.scenario.synthesis.odometry = false;
    c.pipeline.process = {0.05, 0.01, 0.5, 0.01, 1e-4, 1.0};
    return c;
}

/// Straight run accelerating linearly from rest to 10 m/s. Measurement noise
/// is half the default and velocity process noise is small so the speed
/// estimate crosses v_lm cleanly.
inline Config accelerating_preset() {
    Config c;
    c.scenario.name = "accelerating";
    c.scenario.anchors = {make_anchor(1, {0, -30, 10}, AnchorKind::Physical),
                          make_anchor(2, {250, 30, 10}, AnchorKind::Virtual),
                          make_anchor(3, {500, -30, 10}, AnchorKind::Virtual)};
    auto& t = c.scenario.trajectory;
    t.kind = TrajectoryKind::CustomWaypoints;
    t.schedule = SpeedSchedule::Ramp;
    t.speed_min = 0.0;
    t.speed_max = 10.0;
    t.duration = 100;
    t.waypoints = {{0, 0, 0}, {2000, 0, 0}};
    t.heading_noise = 0.0;
    t.max_turn_rate = 0.0;
    c.scenario.synthesis.odometry = true;
    c.scenario.synthesis.noise = c.scenario.synthesis.noise.scaled(0.5);
    c.pipeline.noise = c.scenario.synthesis.noise;
    c.pipeline.process = {0.01, 0.01, 0.001, 0.01, 1e-4, 1.0};
    return c;
}

inline Config preset(const std::string& name) {
    if (name == "pedestrian") return pedestrian_preset();
    if (name == "vehicular") return vehicular_preset();
    if (name == "accelerating") return accelerating_preset();
    throw ValidationError("preset: unknown preset '" + name + "'");
}

// ---------------------------------------------------------------------------
// JSON reading

namespace detail {

using nlohmann::json;

/// Reads keys of one JSON object, rejecting unknown keys.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ValidationError(path_ + ": expected an object");
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    bool has(const std::string& key) {
        used_.insert(key);
        return j_.contains(key);
    }

    const json& at(const std::string& key) {
        used_.insert(key);
        return j_.at(key);
    }

    void number(const std::string& key, double& out) {
        if (!has(key)) return;
        const auto& v = j_.at(key);
        if (!v.is_number()) throw ValidationError(field(key) + ": expected a number");
        out = v.get<double>();
    }

    template <typename Int>
    void integer(const std::string& key, Int& out) {
        if (!has(key)) return;
        const auto& v = j_.at(key);
        if (!v.is_number_integer() || v.get<long long>() < 0)
            throw ValidationError(field(key) + ": expected a non-negative integer");
        out = static_cast<Int>(v.get<unsigned long long>());
    }

    void boolean(const std::string& key, bool& out) {
        if (!has(key)) return;
        const auto& v = j_.at(key);
        if (!v.is_boolean()) throw ValidationError(field(key) + ": expected true or false");
        out = v.get<bool>();
    }

    void string(const std::string& key, std::string& out) {
        if (!has(key)) return;
        const auto& v = j_.at(key);
        if (!v.is_string()) throw ValidationError(field(key) + ": expected a string");
        out = v.get<std::string>();
    }

    void vec3(const std::string& key, Vec3& out) {
        if (!has(key)) return;
        out = parse_vec3(j_.at(key), field(key));
    }

    static Vec3 parse_vec3(const json& v, const std::string& path) {
        if (!v.is_array() || v.size() != 3)
            throw ValidationError(path + ": expected an array of 3 numbers");
        Vec3 out;
        for (int i = 0; i < 3; ++i) {
            if (!v[i].is_number()) throw ValidationError(path + ": expected an array of 3 numbers");
            out(i) = v[i].get<double>();
        }
        return out;
    }

    ObjectReader object(const std::string& key) {
        used_.insert(key);
        return ObjectReader(j_.at(key), field(key));
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!used_.count(it.key())) throw ValidationError(field(it.key()) + ": unknown key");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

inline ChannelSet parse_channels(const json& v, const std::string& path) {
    if (!v.is_array()) throw ValidationError(path + ": expected an array of channel names");
    ChannelSet out;
    for (const auto& e : v) {
        if (!e.is_string()) throw ValidationError(path + ": expected channel names");
        const auto c = parse_channel(e.get<std::string>());
        if (!c) throw ValidationError(path + ": unknown channel '" + e.get<std::string>() + "'");
        out.insert(*c);
    }
    return out;
}

inline void read_anchors(const json& v, const std::string& path, AnchorList& out) {
    if (!v.is_array()) throw ValidationError(path + ": expected an array");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
        ObjectReader r(v[i], path + "[" + std::to_string(i) + "]");
        Anchor a;
        int id = 0;
        r.integer("id", id);
        a.id = id;
        if (!r.has("position")) throw ValidationError(r.field("position") + ": required");
        r.vec3("position", a.position);
        std::string kind = "virtual";
        r.string("kind", kind);
        if (kind == "physical") a.kind = AnchorKind::Physical;
        else if (kind == "virtual") a.kind = AnchorKind::Virtual;
        else throw ValidationError(r.field("kind") + ": expected 'physical' or 'virtual'");
        a.channels = ChannelSet::all_anchor();
        if (a.kind == AnchorKind::Physical) a.channels.insert(Channel::Doppler);
        if (r.has("channels")) a.channels = parse_channels(r.at("channels"), r.field("channels"));
        r.finish();
        out.push_back(a);
    }
}

inline void read_noise(ObjectReader r, NoiseProfile& n) {
    r.number("sigma_toa", n.sigma_toa);
    r.number("sigma_az", n.sigma_az);
    r.number("sigma_el", n.sigma_el);
    r.number("sigma_aod", n.sigma_aod);
    r.number("sigma_dop", n.sigma_dop);
    r.number("sigma_vodo", n.sigma_vodo);
    r.number("sigma_hodo", n.sigma_hodo);
    r.finish();
}

inline void read_trajectory(ObjectReader r, TrajectoryProfile& t) {
    std::string kind(to_string(t.kind));
    r.string("kind", kind);
    if (kind == "pedestrian-waypoint") t.kind = TrajectoryKind::PedestrianWaypoint;
    else if (kind == "vehicular-lane") t.kind = TrajectoryKind::VehicularLane;
    else if (kind == "custom-waypoints") t.kind = TrajectoryKind::CustomWaypoints;
    else throw ValidationError(r.field("kind") + ": unknown trajectory kind '" + kind + "'");
    std::string sched(to_string(t.schedule));
    r.string("speed_schedule", sched);
    if (sched == "constant") t.schedule = SpeedSchedule::Constant;
    else if (sched == "smooth") t.schedule = SpeedSchedule::Smooth;
    else if (sched == "ramp") t.schedule = SpeedSchedule::Ramp;
    else throw ValidationError(r.field("speed_schedule") + ": unknown schedule '" + sched + "'");
    r.number("speed_min", t.speed_min);
    r.number("speed_max", t.speed_max);
    r.number("speed_period", t.speed_period);
    r.integer("duration", t.duration);
    r.number("dt", t.dt);
    if (r.has("waypoints")) {
        const auto& w = r.at("waypoints");
        if (!w.is_array()) throw ValidationError(r.field("waypoints") + ": expected an array");
        t.waypoints.clear();
        for (std::size_t i = 0; i < w.size(); ++i)
            t.waypoints.push_back(ObjectReader::parse_vec3(w[i], r.field("waypoints") + "[" + std::to_string(i) + "]"));
    }
    r.number("heading_noise", t.heading_noise);
    r.number("max_turn_rate", t.max_turn_rate);
    r.number("doppler_spread_coeff", t.doppler_spread_coeff);
    r.number("bias_walk_sigma", t.bias_walk_sigma);
    r.number("initial_bias", t.initial_bias);
    r.finish();
}

inline void read_scenario(ObjectReader r, ScenarioConfig& s) {
    r.string("name", s.name);
    if (r.has("anchors")) read_anchors(r.at("anchors"), r.field("anchors"), s.anchors);
    if (r.has("trajectory")) read_trajectory(r.object("trajectory"), s.trajectory);
    if (r.has("noise")) read_noise(r.object("noise"), s.synthesis.noise);
    r.number("noise_scale", s.synthesis.noise_scale);
    r.boolean("odometry", s.synthesis.odometry);
    if (r.has("outliers")) {
        auto o = r.object("outliers");
        o.number("rate", s.synthesis.outliers.rate);
        o.number("magnitude", s.synthesis.outliers.magnitude);
        if (o.has("channels"))
            s.synthesis.outliers.channels = parse_channels(o.at("channels"), o.field("channels"));
        o.finish();
    }
    r.finish();
}

inline void read_pipeline(ObjectReader r, PipelineConfig& p) {
    if (r.has("filter")) {
        std::string f;
        r.string("filter", f);
        const auto choice = parse_filter_choice(f);
        if (!choice) throw ValidationError(r.field("filter") + ": expected ekf, ukf, ckf or hybrid");
        p.filter = *choice;
    }
    r.number("v_lm", p.v_lm);
    r.number("v_hm", p.v_hm);
    r.number("hysteresis", p.hysteresis);
    r.number("dt", p.dt);
    r.boolean("flat", p.flat);
    r.number("odo_heading_min_speed", p.odo_heading_min_speed);
    if (r.has("gating")) {
        auto g = r.object("gating");
        g.boolean("enabled", p.gating.enabled);
        g.number("confidence", p.gating.confidence);
        g.boolean("per_channel", p.gating.per_channel);
        g.integer("max_consecutive_rejections", p.gating.max_consecutive_rejections);
        g.integer("max_isolated", p.gating.max_isolated);
        g.finish();
    }
    if (r.has("adaptation")) {
        auto a = r.object("adaptation");
        a.boolean("enabled", p.adaptation.enabled);
        a.integer("window", p.adaptation.window);
        a.number("gamma_min", p.adaptation.gamma_min);
        a.number("gamma_max", p.adaptation.gamma_max);
        a.finish();
    }
    if (r.has("smoother")) {
        auto s = r.object("smoother");
        s.boolean("enabled", p.smoothing);
        s.integer("window", p.smoother_window);
        s.finish();
    }
    if (r.has("ukf")) {
        auto u = r.object("ukf");
        u.number("alpha", p.ukf.alpha);
        u.number("beta", p.ukf.beta);
        u.number("kappa", p.ukf.kappa);
        u.finish();
    }
    if (r.has("noise")) read_noise(r.object("noise"), p.noise);
    if (r.has("process_noise")) {
        auto q = r.object("process_noise");
        q.number("sigma_p2", p.process.sigma_p2);
        q.number("sigma_pz2", p.process.sigma_pz2);
        q.number("sigma_v2_base", p.process.sigma_v2_base);
        q.number("sigma_vz2_base", p.process.sigma_vz2_base);
        q.number("sigma_b2", p.process.sigma_b2);
        q.number("kappa_d", p.process.kappa_d);
        q.finish();
    }
    if (r.has("init")) {
        auto i = r.object("init");
        i.vec3("position_offset", p.init.position_offset);
        i.vec3("velocity_offset", p.init.velocity_offset);
        i.number("bias_offset", p.init.bias_offset);
        i.number("position_var", p.init.position_var);
        i.number("velocity_var", p.init.velocity_var);
        i.number("bias_var", p.init.bias_var);
        i.finish();
    }
    r.finish();
}

}  // namespace detail

/// Parses and validates a config document.
inline Config parse_config(const nlohmann::json& j) {
    detail::ObjectReader r(j, "");
    std::string base = "pedestrian";
    r.string("preset", base);
    Config c = preset(base);
    if (r.has("scenario")) detail::read_scenario(r.object("scenario"), c.scenario);
    if (r.has("pipeline")) detail::read_pipeline(r.object("pipeline"), c.pipeline);
    r.integer("seed", c.seed);
    r.finish();
    c.validate();
    return c;
}

inline Config load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("config: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
    return parse_config(j);
}

inline nlohmann::json to_json(const Config& c) {
    using nlohmann::json;
    auto noise_json = [](const NoiseProfile& n) {
        return json{{"sigma_toa", n.sigma_toa}, {"sigma_az", n.sigma_az}, {"sigma_el", n.sigma_el},
                    {"sigma_aod", n.sigma_aod}, {"sigma_dop", n.sigma_dop},
                    {"sigma_vodo", n.sigma_vodo}, {"sigma_hodo", n.sigma_hodo}};
    };
    auto channels_json = [](const ChannelSet& s) {
        json out = json::array();
        for (auto ch : {Channel::Toa, Channel::AoaAz, Channel::AoaEl, Channel::Aod, Channel::Doppler})
            if (s.contains(ch)) out.push_back(std::string(channel_name(ch)));
        return out;
    };
    auto v3 = [](const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); };

    json anchors = json::array();
    for (const auto& a : c.scenario.anchors)
        anchors.push_back({{"id", a.id},
                           {"position", v3(a.position)},
                           {"kind", a.is_los() ? "physical" : "virtual"},
                           {"channels", channels_json(a.channels)}});
    const auto& t = c.scenario.trajectory;
    json waypoints = json::array();
    for (const auto& w : t.waypoints) waypoints.push_back(v3(w));
    const auto& p = c.pipeline;
    return json{
        {"seed", c.seed},
        {"scenario",
         {{"name", c.scenario.name},
          {"anchors", anchors},
          {"trajectory",
           {{"kind", std::string(to_string(t.kind))},
            {"speed_schedule", std::string(to_string(t.schedule))},
            {"speed_min", t.speed_min},
            {"speed_max", t.speed_max},
            {"speed_period", t.speed_period},
            {"duration", t.duration},
            {"dt", t.dt},
            {"waypoints", waypoints},
            {"heading_noise", t.heading_noise},
            {"max_turn_rate", t.max_turn_rate},
            {"doppler_spread_coeff", t.doppler_spread_coeff},
            {"bias_walk_sigma", t.bias_walk_sigma},
            {"initial_bias", t.initial_bias}}},
          {"noise", noise_json(c.scenario.synthesis.noise)},
          {"noise_scale", c.scenario.synthesis.noise_scale},
          {"odometry", c.scenario.synthesis.odometry},
          {"outliers",
           {{"rate", c.scenario.synthesis.outliers.rate},
            {"magnitude", c.scenario.synthesis.outliers.magnitude},
            {"channels", channels_json(c.scenario.synthesis.outliers.channels)}}}}},
        {"pipeline",
         {{"filter", std::string(to_string(p.filter))},
          {"v_lm", p.v_lm},
          {"v_hm", p.v_hm},
          {"hysteresis", p.hysteresis},
          {"dt", p.dt},
          {"flat", p.flat},
          {"odo_heading_min_speed", p.odo_heading_min_speed},
          {"gating", {{"enabled", p.gating.enabled}, {"confidence", p.gating.confidence}, {"per_channel", p.gating.per_channel},
                      {"max_consecutive_rejections", p.gating.max_consecutive_rejections},
                      {"max_isolated", p.gating.max_isolated}}},
          {"adaptation",
           {{"enabled", p.adaptation.enabled},
            {"window", p.adaptation.window},
            {"gamma_min", p.adaptation.gamma_min},
            {"gamma_max", p.adaptation.gamma_max}}},
          {"smoother", {{"enabled", p.smoothing}, {"window", p.smoother_window}}},
          {"ukf", {{"alpha", p.ukf.alpha}, {"beta", p.ukf.beta}, {"kappa", p.ukf.kappa}}},
          {"noise", noise_json(p.noise)},
          {"process_noise",
           {{"sigma_p2", p.process.sigma_p2},
            {"sigma_pz2", p.process.sigma_pz2},
            {"sigma_v2_base", p.process.sigma_v2_base},
            {"sigma_vz2_base", p.process.sigma_vz2_base},
            {"sigma_b2", p.process.sigma_b2},
            {"kappa_d", p.process.kappa_d}}},
          {"init",
           {{"position_offset", v3(p.init.position_offset)},
            {"velocity_offset", v3(p.init.velocity_offset)},
            {"bias_offset", p.init.bias_offset},
            {"position_var", p.init.position_var},
            {"velocity_var", p.init.velocity_var},
            {"bias_var", p.init.bias_var}}}}}};
}

/// Ground truth and measurement stream for a config and seed.
struct SimulatedScenario {
    GroundTruth truth;
    MeasurementStream stream;
};

inline SimulatedScenario simulate(const Config& c, std::uint64_t seed) {
    SimulatedScenario s;
    s.truth = gen_trajectory(c.scenario.trajectory, seed);
    s.stream = synthesize(s.truth, c.scenario.anchors, c.scenario.synthesis, seed);
    return s;
}

}  // namespace mmwloc
