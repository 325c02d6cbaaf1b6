#pragma once

// Speed-gated EKF/UKF tracking loop:
//   predict (shared CV model, gamma-scaled Q) -> classify on predicted speed
//   -> gate -> update (gamma-scaled R) -> adapt, then windowed RTS smoothing.

#include "mmwloc/error.hpp"
#include "mmwloc/evaluation.hpp"
#include "mmwloc/filters.hpp"
#include "mmwloc/measurement.hpp"
#include "mmwloc/robustness.hpp"
#include "mmwloc/state_space.hpp"
#include "mmwloc/types.hpp"

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mmwloc {

enum class FilterChoice { Ekf, Ukf, Ckf, Hybrid };

inline std::string_view to_string(FilterChoice f) {
    switch (f) {
        case FilterChoice::Ekf: return "ekf";
        case FilterChoice::Ukf: return "ukf";
        case FilterChoice::Ckf: return "ckf";
        case FilterChoice::Hybrid: return "hybrid";
    }
    return "?";
}

inline std::optional<FilterChoice> parse_filter_choice(std::string_view s) {
    for (auto f : {FilterChoice::Ekf, FilterChoice::Ukf, FilterChoice::Ckf, FilterChoice::Hybrid})
        if (to_string(f) == s) return f;
    return std::nullopt;
}

/// Initial belief: truth at the first epoch plus a fixed perturbation.
struct InitConfig {
    Vec3 position_offset = Vec3::Constant(1.0);
    Vec3 velocity_offset = Vec3::Zero();
    double bias_offset = 0.0;
    double position_var = 10.0;
    double velocity_var = 4.0;
    double bias_var = 1.0;
};

struct PipelineConfig {
    FilterChoice filter = FilterChoice::Hybrid;
    double v_lm = 2.0;
    double v_hm = 20.0;
    double hysteresis = 0.2;
    GateConfig gating;
    AdaptationConfig adaptation;
    bool smoothing = true;
    std::size_t smoother_window = 200;
    UnscentedParams ukf;
    NoiseProfile noise;
    ProcessNoiseParams process;
    double dt = 1.0;
    bool flat = false;
    /// Odometry heading is dropped while the predicted horizontal speed is below this.
    double odo_heading_min_speed = 0.5;
    InitConfig init;

    /// Gating, adaptation and smoothing all off.
    PipelineConfig plain() const {
        PipelineConfig c = *this;
        c.gating.enabled = false;
        c.adaptation.enabled = false;
        c.smoothing = false;
        return c;
    }

    void validate() const {
        if (!(v_lm > 0.0)) throw ValidationError("pipeline.v_lm: must be positive");
        if (!(v_lm < v_hm))
            throw ValidationError("pipeline.v_lm, pipeline.v_hm: v_lm must be below v_hm");
        if (!(hysteresis >= 0.0)) throw ValidationError("pipeline.hysteresis: must be >= 0");
        if (!(gating.confidence > 0.0 && gating.confidence < 1.0))
            throw ValidationError("pipeline.gating.confidence: must lie in (0, 1)");
        if (gating.max_consecutive_rejections < 0)
            throw ValidationError("pipeline.gating.max_consecutive_rejections: must be >= 0");
        if (gating.max_isolated < 0)
            throw ValidationError("pipeline.gating.max_isolated: must be >= 0");
        if (adaptation.window < 1) throw ValidationError("pipeline.adaptation.window: must be >= 1");
        if (!(adaptation.gamma_min > 0.0 && adaptation.gamma_min <= 1.0 &&
              adaptation.gamma_max >= 1.0))
            throw ValidationError(
                "pipeline.adaptation.gamma_min, pipeline.adaptation.gamma_max: need 0 < min <= 1 <= max");
        if (smoother_window < 1) throw ValidationError("pipeline.smoother.window: must be >= 1");
        if (!(dt > 0.0) || !std::isfinite(dt)) throw ValidationError("pipeline.dt: must be positive");
        if (!noise.valid()) throw ValidationError("pipeline.noise: all sigmas must be positive");
        if (!(kStateDim + ukf.lambda(kStateDim) > 0.0))
            throw ValidationError("pipeline.ukf: n + lambda must be positive");
        if (process.sigma_p2 < 0 || process.sigma_pz2 < 0 || process.sigma_v2_base < 0 ||
            process.sigma_vz2_base < 0 || process.sigma_b2 < 0 || process.kappa_d < 0)
            throw ValidationError("pipeline.process_noise: values must be non-negative");
        if (!(init.position_var > 0 && init.velocity_var > 0 && init.bias_var > 0))
            throw ValidationError("pipeline.init: variances must be positive");
    }
};

inline double estimate_speed(const StateEstimate& pred) { return velocity_of(pred.mean).norm(); }

/// Speed-gated mode selection with a hysteresis band around v_lm.
inline MobilityMode classify(double speed, std::optional<MobilityMode> prev,
                             const PipelineConfig& cfg) {
    if (!(speed >= 0.0)) throw InvalidArgument("classify: speed must be non-negative");
    if (speed > cfg.v_hm) return MobilityMode::OutOfRange;
    double upper = cfg.v_lm;
    if (prev == MobilityMode::LowMobility) upper += cfg.hysteresis;
    if (prev == MobilityMode::HighMobility || prev == MobilityMode::OutOfRange)
        upper -= cfg.hysteresis;
    return speed <= upper ? MobilityMode::LowMobility : MobilityMode::HighMobility;
}

/// Both branches share the 7-D parameterization, so the handoff is the identity.
inline StateEstimate handoff(const StateEstimate& est, MobilityMode, MobilityMode) { return est; }

inline FilterKind filter_for(FilterChoice choice, MobilityMode mode) {
    switch (choice) {
        case FilterChoice::Ekf: return FilterKind::Ekf;
        case FilterChoice::Ukf: return FilterKind::Ukf;
        case FilterChoice::Ckf: return FilterKind::Ckf;
        case FilterChoice::Hybrid:
            return mode == MobilityMode::LowMobility ? FilterKind::Ekf : FilterKind::Ukf;
    }
    return FilterKind::Ukf;
}

/// Channels fed to the update: odometry only in low-mobility mode, heading
/// only when the predicted horizontal speed makes it well defined.
inline MeasurementBundle select_channels(const MeasurementBundle& b, MobilityMode mode,
                                         const StateEstimate& pred, const PipelineConfig& cfg) {
    const double hspeed = std::hypot(pred.mean(idx::kVx), pred.mean(idx::kVy));
    return filter_entries(b, [&](const Measurement& m) {
        if (m.channel == Channel::OdoSpeed) return mode == MobilityMode::LowMobility;
        if (m.channel == Channel::OdoHeading)
            return mode == MobilityMode::LowMobility && hspeed >= cfg.odo_heading_min_speed;
        return true;
    });
}

inline StateEstimate initial_estimate(const StateVector& truth0, const PipelineConfig& cfg,
                                      std::size_t epoch = 0) {
    StateEstimate est;
    est.mean = truth0;
    est.mean.segment<3>(idx::kX) += cfg.init.position_offset;
    est.mean.segment<3>(idx::kVx) += cfg.init.velocity_offset;
    est.mean(idx::kBias) += cfg.init.bias_offset;
    StateVector d;
    d << Vec3::Constant(cfg.init.position_var), Vec3::Constant(cfg.init.velocity_var),
        cfg.init.bias_var;
    if (cfg.flat) {
        est.mean(idx::kZ) = truth0(idx::kZ);
        est.mean(idx::kVz) = truth0(idx::kVz);
        d(idx::kZ) = 0.0;
        d(idx::kVz) = 0.0;
    }
    est.cov = d.asDiagonal();
    est.epoch = epoch;
    return est;
}

struct EpochLog {
    std::size_t epoch = 0;
    MobilityMode mode = MobilityMode::LowMobility;
    FilterKind filter = FilterKind::Ekf;
    bool switched = false;
    bool out_of_range = false;
    StateEstimate predicted;
    StateEstimate posterior;
    StateMatrix F = StateMatrix::Identity();
    StateMatrix Q = StateMatrix::Zero();
    Eigen::VectorXd innovation;
    double nis = 0.0;
    int dof = 0;
    double threshold = 0.0;
    GateDecision gate = GateDecision::NotGated;
    int rejected_channels = 0;
    double gamma = 1.0;
    std::string failure;
};

/// One tracked UE. Single-threaded; owns its adaptation state and log.
class HybridPipeline {
public:
    HybridPipeline(PipelineConfig cfg, AnchorList anchors)
        : cfg_(std::move(cfg)),
          anchors_(validated_anchors(std::move(anchors))),
          adapt_(cfg_.adaptation),
          transition_(build_transition(cfg_.dt)),
          process_(cfg_.flat ? cfg_.process.flattened() : cfg_.process) {
        cfg_.validate();
    }

    void initialize(const StateEstimate& est) {
        estimate_ = est;
        initialized_ = true;
        log_.clear();
        mode_.reset();
        consecutive_rejections_ = 0;
        adapt_ = AdaptationState(cfg_.adaptation);
    }

    bool initialized() const { return initialized_; }
    const StateEstimate& estimate() const { return estimate_; }
    const std::vector<EpochLog>& log() const { return log_; }
    const PipelineConfig& config() const { return cfg_; }
    const AnchorList& anchors() const { return anchors_; }

    const EpochLog& step(const MeasurementBundle& bundle) {
        if (!initialized_) throw InvalidArgument("step: pipeline not initialized");
        if (!log_.empty() && bundle.epoch != log_.back().epoch + 1)
            throw ValidationError("step: epoch " + std::to_string(bundle.epoch) +
                                  " does not follow " + std::to_string(log_.back().epoch));
        EpochLog e;
        e.epoch = bundle.epoch;
        const bool adapting = cfg_.adaptation.enabled;
        e.gamma = adapting ? adapt_.gamma() : 1.0;

        if (log_.empty()) {
            e.predicted = estimate_;
        } else {
            e.F = transition_.F;
            e.Q = build_process_noise(process_, bundle.doppler_spread);
            if (adapting) e.Q *= e.gamma;
            e.predicted = propagate(estimate_, transition_, e.Q);
        }
        e.predicted.epoch = bundle.epoch;

        e.mode = classify(estimate_speed(e.predicted), mode_, cfg_);
        e.out_of_range = e.mode == MobilityMode::OutOfRange;
        e.filter = filter_for(cfg_.filter, e.mode);
        StateEstimate prior = e.predicted;
        if (mode_ && *mode_ != e.mode && filter_for(cfg_.filter, *mode_) != e.filter) {
            prior = handoff(prior, *mode_, e.mode);
            e.switched = true;
        }
        mode_ = e.mode;

        e.posterior = prior;
        try {
            update(prior, select_channels(bundle, e.mode, prior, cfg_), e);
        } catch (const DegenerateGeometry& ex) {
            e.gate = GateDecision::Failed;
            e.failure = ex.what();
            e.posterior = prior;
        } catch (const NumericalFailure& ex) {
            e.gate = GateDecision::Failed;
            e.failure = ex.what();
            e.posterior = prior;
        }
        if (!e.posterior.mean.allFinite() || !e.posterior.cov.allFinite()) {
            e.gate = GateDecision::Failed;
            e.failure = "non-finite state estimate";
            log_.push_back(std::move(e));
            throw NumericalFailure("epoch " + std::to_string(bundle.epoch) + ": non-finite state estimate");
        }
        estimate_ = e.posterior;
        log_.push_back(std::move(e));
        return log_.back();
    }

private:
    void update(const StateEstimate& prior, const MeasurementBundle& used, EpochLog& e) {
        ChannelModel model{&anchors_, used.layout()};
        Eigen::VectorXd z = used.values();
        Eigen::MatrixXd r = assemble_R(cfg_.noise, model.layout);
        if (cfg_.adaptation.enabled) r *= e.gamma;

        auto in = innovate(e.filter, prior, z, model, r, cfg_.ukf);
        e.innovation = in.y;
        e.dof = static_cast<int>(in.dim());
        e.nis = in.nis();
        if (in.dim() == 0) return;

        if (cfg_.gating.enabled) {
            const int limit = cfg_.gating.max_consecutive_rejections;
            if (limit > 0 && consecutive_rejections_ >= limit) {
                e.gate = GateDecision::Forced;
            } else if (cfg_.gating.per_channel) {
                if (!gate_per_channel(prior, used, model, in, e)) return reject(e);
            } else if (!gate_bundle(prior, used, model, in, e)) {
                return reject(e);
            }
        }
        consecutive_rejections_ = 0;
        e.posterior = correct(prior, in);
        if (cfg_.adaptation.enabled) adapt_.push(e.nis, e.dof);
    }

    // Rejected bundles still inform the noise scale, capped at the gate
    // threshold so a single outlier moves the window mean by a bounded amount.
    void reject(EpochLog& e) {
        ++consecutive_rejections_;
        if (cfg_.adaptation.enabled && e.dof > 0)
            adapt_.push(std::min(e.nis, e.threshold * (cfg_.gating.per_channel ? e.dof : 1)), e.dof);
    }

    /// Stacked-NIS gate. A failing bundle loses its most inconsistent channels
    /// one at a time, up to max_isolated, and is re-gated on what remains.
    bool gate_bundle(const StateEstimate& prior, const MeasurementBundle& used,
                     ChannelModel& model, Innovation<kStateDim>& in, EpochLog& e) {
        auto g = gate_nis(e.nis, e.dof, cfg_.gating);
        e.gate = g.decision;
        e.threshold = g.threshold;
        if (g.decision == GateDecision::Accepted) return true;
        const double full_nis = e.nis;
        const int full_dof = e.dof;
        const double full_threshold = e.threshold;
        MeasurementBundle sub = used;
        for (int k = 0; k < cfg_.gating.max_isolated && sub.entries.size() > 1; ++k) {
            const auto worst = most_inconsistent(in.y, *in.solver);
            sub.entries.erase(sub.entries.begin() + worst.first);
            model.layout = sub.layout();
            Eigen::MatrixXd r = assemble_R(cfg_.noise, model.layout);
            if (cfg_.adaptation.enabled) r *= e.gamma;
            in = innovate(e.filter, prior, sub.values(), model, r, cfg_.ukf);
            g = gate_nis(in.nis(), static_cast<int>(in.dim()), cfg_.gating);
            if (g.decision == GateDecision::Accepted) {
                e.gate = GateDecision::Accepted;
                e.rejected_channels = k + 1;
                e.innovation = in.y;
                e.dof = static_cast<int>(in.dim());
                e.nis = in.nis();
                e.threshold = g.threshold;
                return true;
            }
        }
        e.nis = full_nis;
        e.dof = full_dof;
        e.threshold = full_threshold;
        e.gate = GateDecision::Rejected;
        return false;
    }

    /// Drops channels whose scalar NIS exceeds the chi2(1) quantile and
    /// recomputes the innovation on the rest. False when nothing survives.
    bool gate_per_channel(const StateEstimate& prior, const MeasurementBundle& used,
                          ChannelModel& model, Innovation<kStateDim>& in, EpochLog& e) {
        const double thr1 = chi2_quantile(1, cfg_.gating.confidence);
        std::vector<std::size_t> keep;
        for (Eigen::Index i = 0; i < in.dim(); ++i)
            if (in.y(i) * in.y(i) / in.S(i, i) < thr1) keep.push_back(static_cast<std::size_t>(i));
        e.rejected_channels = static_cast<int>(in.dim()) - static_cast<int>(keep.size());
        e.threshold = thr1;
        if (keep.empty()) {
            e.gate = GateDecision::Rejected;
            return false;
        }
        e.gate = GateDecision::Accepted;
        if (e.rejected_channels == 0) return true;
        MeasurementBundle sub;
        sub.epoch = used.epoch;
        for (auto i : keep) sub.entries.push_back(used.entries[i]);
        model.layout = sub.layout();
        Eigen::MatrixXd r = assemble_R(cfg_.noise, model.layout);
        if (cfg_.adaptation.enabled) r *= e.gamma;
        in = innovate(e.filter, prior, sub.values(), model, r, cfg_.ukf);
        e.innovation = in.y;
        e.dof = static_cast<int>(in.dim());
        e.nis = in.nis();
        return true;
    }

    PipelineConfig cfg_;
    AnchorList anchors_;
    AdaptationState adapt_;
    TransitionModel transition_;
    ProcessNoiseParams process_;
    StateEstimate estimate_;
    bool initialized_ = false;
    int consecutive_rejections_ = 0;
    std::optional<MobilityMode> mode_;
    std::vector<EpochLog> log_;
};

/// Backward RTS pass over consecutive blocks of `window` epochs of a log.
inline std::vector<StateEstimate> smooth_log(const std::vector<EpochLog>& log, std::size_t window) {
    if (window < 1) throw InvalidArgument("smooth_log: window must be >= 1");
    std::vector<StateEstimate> out;
    out.reserve(log.size());
    for (std::size_t start = 0; start < log.size(); start += window) {
        const std::size_t end = std::min(log.size(), start + window);
        std::vector<SmootherEpoch<kStateDim>> block;
        block.reserve(end - start);
        for (std::size_t k = start; k < end; ++k) {
            SmootherEpoch<kStateDim> s;
            s.filtered = log[k].posterior;
            if (k + 1 < end) {
                s.predicted_next = log[k + 1].predicted;
                s.F = log[k + 1].F;
                s.Q = log[k + 1].Q;
            } else {
                s.predicted_next = log[k].posterior;
                s.F = StateMatrix::Identity();
                s.Q = StateMatrix::Zero();
            }
            block.push_back(s);
        }
        for (auto& est : rts_smooth(block)) out.push_back(std::move(est));
    }
    return out;
}

struct RunReport {
    FilterChoice filter = FilterChoice::Hybrid;
    bool gating = true;
    bool adaptation = true;
    bool smoothing = true;
    std::vector<EpochLog> log;
    std::vector<StateEstimate> filtered;
    std::vector<StateEstimate> smoothed;  // empty when smoothing is off
    std::optional<MetricReport> filtered_metrics;
    std::optional<MetricReport> smoothed_metrics;
    std::map<std::string, std::size_t> mode_histogram;
    std::size_t mode_transitions = 0;
    std::size_t gate_rejections = 0;
    double gate_rejection_rate = 0.0;
    std::size_t failures = 0;
    std::size_t out_of_range_epochs = 0;

    /// Smoothed trajectory if available, else the forward filter's.
    const std::vector<StateEstimate>& final_trajectory() const {
        return smoothed.empty() ? filtered : smoothed;
    }
    const MetricReport& final_metrics() const {
        return smoothed_metrics ? *smoothed_metrics : filtered_metrics.value();
    }
};

inline NeesSubspace nees_subspace(const PipelineConfig& cfg) {
    return cfg.flat ? NeesSubspace::PlanarPosition : NeesSubspace::Position;
}

/// Thrown by run() when the filter cannot continue. Carries the epochs
/// processed so far, including the failing one.
class RunAborted : public NumericalFailure {
public:
    RunAborted(const std::string& what, std::vector<EpochLog> partial)
        : NumericalFailure(what), log_(std::move(partial)) {}
    const std::vector<EpochLog>& log() const { return log_; }

private:
    std::vector<EpochLog> log_;
};

/// Runs the whole stream, initialized from the first ground-truth state.
inline RunReport run(const PipelineConfig& cfg, const AnchorList& anchors,
                     const MeasurementStream& stream, const std::vector<StateVector>& truth) {
    if (stream.empty()) throw InvalidArgument("run: empty measurement stream");
    if (truth.size() != stream.size())
        throw InvalidArgument("run: ground truth and measurement stream lengths differ");
    HybridPipeline pipe(cfg, anchors);
    pipe.initialize(initial_estimate(truth.front(), cfg, stream.front().epoch));
    for (const auto& b : stream) {
        try {
            pipe.step(b);
        } catch (const NumericalFailure& ex) {
            throw RunAborted(ex.what(), pipe.log());
        }
    }

    RunReport rep;
    rep.filter = cfg.filter;
    rep.gating = cfg.gating.enabled;
    rep.adaptation = cfg.adaptation.enabled;
    rep.smoothing = cfg.smoothing;
    rep.log = pipe.log();
    std::size_t gated = 0;
    for (std::size_t k = 0; k < rep.log.size(); ++k) {
        const auto& e = rep.log[k];
        rep.filtered.push_back(e.posterior);
        rep.mode_histogram[std::string(to_string(e.mode))] += 1;
        if (k > 0 && e.mode != rep.log[k - 1].mode) ++rep.mode_transitions;
        if (e.gate == GateDecision::Accepted || e.gate == GateDecision::Rejected ||
            e.gate == GateDecision::Forced)
            ++gated;
        if (e.gate == GateDecision::Rejected) ++rep.gate_rejections;
        if (e.gate == GateDecision::Failed) ++rep.failures;
        if (e.out_of_range) ++rep.out_of_range_epochs;
    }
    rep.gate_rejection_rate = gated ? static_cast<double>(rep.gate_rejections) / gated : 0.0;
    if (cfg.smoothing) rep.smoothed = smooth_log(rep.log, cfg.smoother_window);

    const auto sub = nees_subspace(cfg);
    rep.filtered_metrics = evaluate_trajectory(rep.filtered, truth, sub);
    if (cfg.smoothing) rep.smoothed_metrics = evaluate_trajectory(rep.smoothed, truth, sub);
    return rep;
}

}  // namespace mmwloc
