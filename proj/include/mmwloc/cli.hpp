#pragma once

// Subcommands behind the mmwloc tool. Each returns a process exit code:
// 0 success, 2 config or validation error, 3 numerical failure.
//
// Output files (all under --out):
//   simulate: measurements.csv, manifest.json
//   run:      report.json, epochs.csv, trajectory.csv, manifest.json
//   compare:  compare.csv, manifest.json

#include "mmwloc/config.hpp"
#include "mmwloc/error.hpp"
#include "mmwloc/pipeline.hpp"
#include "mmwloc/scenario.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace mmwloc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

inline constexpr const char* kVersion = "0.1.0";

struct CommonOptions {
    std::string config;                // JSON file or preset name; empty means "pedestrian"
    std::optional<std::uint64_t> seed;  // overrides the config's seed
    std::string out = "out";
    bool flat = false;
    std::optional<std::string> filter;
    bool no_gating = false;
    bool no_adapt = false;
    bool no_smooth = false;
    bool timing = false;  // adds runtime and a timestamp to the outputs (breaks byte determinism)
};

struct RunOptions : CommonOptions {
    std::string input;  // optional measurements CSV; simulated from the config when empty
};

struct CompareOptions : CommonOptions {
    std::string seeds;  // "0-9" or "1,4,7"; empty means the single config seed
};

/// Loads --config: an existing file is parsed as JSON, otherwise the string
/// must name a preset.
inline Config resolve_config(const std::string& source) {
    if (source.empty()) return preset("pedestrian");
    if (std::filesystem::exists(source)) return load_config(source);
    if (source == "pedestrian" || source == "vehicular" || source == "accelerating") return preset(source);
    throw ValidationError("config: no such file or preset '" + source + "'");
}

inline void apply_overrides(Config& c, const CommonOptions& o) {
    if (o.seed) c.seed = *o.seed;
    if (o.filter) {
        auto f = parse_filter_choice(*o.filter);
        if (!f) throw ValidationError("--filter: expected ekf, ukf, ckf or hybrid, got '" + *o.filter + "'");
        c.pipeline.filter = *f;
    }
    if (o.no_gating) c.pipeline.gating.enabled = false;
    if (o.no_adapt) c.pipeline.adaptation.enabled = false;
    if (o.no_smooth) c.pipeline.smoothing = false;
    if (o.flat) c.pipeline.flat = true;
    c.validate();
}

/// Parses "3", "0-9" or "1,4,7-8".
inline std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(s);
    std::string part;
    auto num = [&](const std::string& t) {
        std::size_t pos = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(t, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (t.empty() || pos != t.size() || t.front() == '-')
            throw ValidationError("--seeds: cannot parse '" + s + "'");
        return static_cast<std::uint64_t>(v);
    };
    while (std::getline(ss, part, ',')) {
        const auto dash = part.find('-', 1);
        if (dash == std::string::npos) {
            out.push_back(num(part));
            continue;
        }
        const auto lo = num(part.substr(0, dash));
        const auto hi = num(part.substr(dash + 1));
        if (hi < lo) throw ValidationError("--seeds: empty range '" + part + "'");
        for (auto k = lo; k <= hi; ++k) out.push_back(k);
    }
    if (out.empty()) throw ValidationError("--seeds: at least one seed required");
    return out;
}

namespace detail {

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ValidationError("--out: cannot create '" + dir + "': " + ec.message());
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot write '" + path + "'");
    f << text;
}

inline std::string fmt(double v) { return mmwloc::detail::format_double(v); }

inline nlohmann::json metrics_json(const MetricReport& m) {
    return {{"ate", m.ate}, {"rpe", m.rpe}, {"nees", m.nees_mean}, {"rmse", m.rmse}};
}

inline nlohmann::json manifest(const std::string& command, const CommonOptions& o, const Config& c,
                               const std::vector<std::string>& files) {
    nlohmann::json m = {{"command", command}, {"version", kVersion}, {"config_path", o.config},
                        {"seed", c.seed}, {"files", files}, {"config", to_json(c)}};
    if (o.timing) {
        const auto now = std::chrono::system_clock::now().time_since_epoch();
        m["timestamp_unix_s"] = std::chrono::duration_cast<std::chrono::seconds>(now).count();
    }
    return m;
}

inline std::string epochs_csv(const std::vector<EpochLog>& log) {
    std::ostringstream os;
    os << "epoch,mode,filter,switched,out_of_range,gate,nis,dof,threshold,rejected_channels,gamma,"
          "x,y,z,vx,vy,vz,b,var_x,var_y,var_z,failure\n";
    for (const auto& e : log) {
        const auto& m = e.posterior.mean;
        const auto& p = e.posterior.cov;
        os << e.epoch << ',' << to_string(e.mode) << ',' << to_string(e.filter) << ','
           << int(e.switched) << ',' << int(e.out_of_range) << ',' << to_string(e.gate) << ','
           << fmt(e.nis) << ',' << e.dof << ',' << fmt(e.threshold) << ',' << e.rejected_channels
           << ',' << fmt(e.gamma);
        for (int i = 0; i < kStateDim; ++i) os << ',' << fmt(m(i));
        for (int i = 0; i < 3; ++i) os << ',' << fmt(p(i, i));
        os << ',' << e.failure << '\n';
    }
    return os.str();
}

inline std::string trajectory_csv(const std::vector<StateEstimate>& est,
                                  const std::vector<StateVector>& truth) {
    std::ostringstream os;
    os << "epoch,x,y,z,vx,vy,vz,b,true_x,true_y,true_z\n";
    for (std::size_t k = 0; k < est.size(); ++k) {
        os << est[k].epoch;
        for (int i = 0; i < kStateDim; ++i) os << ',' << fmt(est[k].mean(i));
        for (int i = 0; i < 3; ++i) os << ',' << fmt(truth[k](i));
        os << '\n';
    }
    return os.str();
}

inline nlohmann::json report_json(const RunReport& r, const Config& c) {
    nlohmann::json j;
    j["filter"] = std::string(to_string(r.filter));
    j["layers"] = {{"gating", r.gating}, {"adaptation", r.adaptation}, {"smoothing", r.smoothing}};
    j["flat"] = c.pipeline.flat;
    j["seed"] = c.seed;
    j["epochs"] = r.log.size();
    j["metrics"] = metrics_json(r.final_metrics());
    j["filtered_metrics"] = metrics_json(*r.filtered_metrics);
    if (r.smoothed_metrics) j["smoothed_metrics"] = metrics_json(*r.smoothed_metrics);
    j["mode_histogram"] = r.mode_histogram;
    j["mode_transitions"] = r.mode_transitions;
    j["gate_rejections"] = r.gate_rejections;
    j["gate_rejection_rate"] = r.gate_rejection_rate;
    j["failures"] = r.failures;
    j["out_of_range_epochs"] = r.out_of_range_epochs;
    j["status"] = "ok";
    return j;
}

template <typename F>
int guarded(std::ostream& err, F&& body) {
    try {
        return body();
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
    } catch (const ParseError& e) {
        err << "error: " << e.what() << '\n';
    } catch (const InvalidArgument& e) {
        err << "error: " << e.what() << '\n';
    } catch (const DegenerateGeometry& e) {
        err << "error: " << e.what() << '\n';
    } catch (const nlohmann::json::exception& e) {
        err << "error: config: " << e.what() << '\n';
    } catch (const NumericalFailure& e) {
        err << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    }
    return kExitConfig;
}

}  // namespace detail

inline int cmd_simulate(const CommonOptions& o, std::ostream& err = std::cerr) {
    return detail::guarded(err, [&] {
        Config c = resolve_config(o.config);
        apply_overrides(c, o);
        const auto sim = simulate(c, c.seed);
        detail::ensure_dir(o.out);
        std::ostringstream csv;
        write_csv(csv, sim.truth, sim.stream);
        detail::write_text(o.out + "/measurements.csv", csv.str());
        detail::write_text(o.out + "/manifest.json",
                           detail::manifest("simulate", o, c, {"measurements.csv"}).dump(2) + "\n");
        return kExitOk;
    });
}

inline int cmd_run(const RunOptions& o, std::ostream& err = std::cerr) {
    return detail::guarded(err, [&]() -> int {
        Config c = resolve_config(o.config);
        apply_overrides(c, o);
        GroundTruth truth;
        MeasurementStream stream;
        if (o.input.empty()) {
            auto sim = simulate(c, c.seed);
            truth = std::move(sim.truth);
            stream = std::move(sim.stream);
        } else {
            auto data = load_csv(o.input, c.scenario.anchors, c.pipeline.noise, c.pipeline.dt);
            truth = std::move(data.truth);
            stream = std::move(data.stream);
        }
        detail::ensure_dir(o.out);
        const std::vector<std::string> files = {"report.json", "epochs.csv", "trajectory.csv"};
        detail::write_text(o.out + "/manifest.json", detail::manifest("run", o, c, files).dump(2) + "\n");

        const auto t0 = std::chrono::steady_clock::now();
        RunReport rep;
        try {
            rep = run(c.pipeline, c.scenario.anchors, stream, truth.states);
        } catch (const RunAborted& ex) {
            detail::write_text(o.out + "/epochs.csv", detail::epochs_csv(ex.log()));
            nlohmann::json j = {{"status", "numerical_failure"}, {"error", ex.what()},
                                {"epochs", ex.log().size()}};
            detail::write_text(o.out + "/report.json", j.dump(2) + "\n");
            err << "numerical failure: " << ex.what() << '\n';
            return kExitNumerical;
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        auto j = detail::report_json(rep, c);
        if (o.timing) j["runtime_s"] = secs;
        detail::write_text(o.out + "/report.json", j.dump(2) + "\n");
        detail::write_text(o.out + "/epochs.csv", detail::epochs_csv(rep.log));
        detail::write_text(o.out + "/trajectory.csv",
                           detail::trajectory_csv(rep.final_trajectory(), truth.states));
        return kExitOk;
    });
}

/// One row of the comparison table.
struct CompareRow {
    std::string name;
    FilterChoice filter;
    bool optimized;
};

inline const std::vector<CompareRow>& compare_rows() {
    static const std::vector<CompareRow> rows = {
        {"ekf", FilterChoice::Ekf, false},        {"ukf", FilterChoice::Ukf, false},
        {"ckf", FilterChoice::Ckf, false},        {"opt-ekf", FilterChoice::Ekf, true},
        {"opt-ukf", FilterChoice::Ukf, true},     {"hybrid", FilterChoice::Hybrid, true}};
    return rows;
}

struct CompareResult {
    std::string row;
    double ate = 0, rpe = 0, nees = 0, rmse = 0;
};

/// Seed-averaged metrics per row. `rows` selects a subset by name.
inline std::vector<CompareResult> compare(const Config& base, const std::vector<std::uint64_t>& seeds,
                                          const std::vector<std::string>& rows = {}) {
    std::vector<CompareRow> selected;
    for (const auto& r : compare_rows())
        if (rows.empty() || std::find(rows.begin(), rows.end(), r.name) != rows.end())
            selected.push_back(r);
    for (const auto& name : rows) {
        const auto& all = compare_rows();
        if (std::none_of(all.begin(), all.end(), [&](const CompareRow& r) { return r.name == name; }))
            throw ValidationError("--filter: unknown compare row '" + name + "'");
    }
    std::vector<CompareResult> out(selected.size());
    for (std::size_t i = 0; i < selected.size(); ++i) out[i].row = selected[i].name;
    for (auto seed : seeds) {
        const auto sim = simulate(base, seed);
        for (std::size_t i = 0; i < selected.size(); ++i) {
            // Optimized rows keep the config's layers, so --no-* flags ablate them.
            PipelineConfig p = selected[i].optimized ? base.pipeline : base.pipeline.plain();
            p.filter = selected[i].filter;
            const auto m = run(p, base.scenario.anchors, sim.stream, sim.truth.states).final_metrics();
            out[i].ate += m.ate;
            out[i].rpe += m.rpe;
            out[i].nees += m.nees_mean;
            out[i].rmse += m.rmse;
        }
    }
    const double n = static_cast<double>(seeds.size());
    for (auto& r : out) {
        r.ate /= n;
        r.rpe /= n;
        r.nees /= n;
        r.rmse /= n;
    }
    return out;
}

inline std::string compare_csv(const std::vector<CompareResult>& rows) {
    std::ostringstream os;
    os << "row,ate,rpe,nees,rmse\n";
    for (const auto& r : rows)
        os << r.row << ',' << detail::fmt(r.ate) << ',' << detail::fmt(r.rpe) << ','
           << detail::fmt(r.nees) << ',' << detail::fmt(r.rmse) << '\n';
    return os.str();
}

/// In compare, --filter is a comma-separated list of row names
/// (ekf, ukf, ckf, opt-ekf, opt-ukf, hybrid).
inline int cmd_compare(const CompareOptions& o, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
    return detail::guarded(err, [&] {
        CommonOptions common = o;
        common.filter.reset();
        Config c = resolve_config(o.config);
        apply_overrides(c, common);
        const auto seeds = o.seeds.empty() ? std::vector<std::uint64_t>{c.seed} : parse_seed_list(o.seeds);
        std::vector<std::string> rows;
        if (o.filter) {
            std::stringstream ss(*o.filter);
            std::string part;
            while (std::getline(ss, part, ',')) rows.push_back(part);
        }
        const auto table = compare_csv(compare(c, seeds, rows));
        detail::ensure_dir(o.out);
        detail::write_text(o.out + "/compare.csv", table);
        auto m = detail::manifest("compare", o, c, {"compare.csv"});
        m["seeds"] = seeds;
        detail::write_text(o.out + "/manifest.json", m.dump(2) + "\n");
        out << table;
        return kExitOk;
    });
}

}  // namespace mmwloc::cli
