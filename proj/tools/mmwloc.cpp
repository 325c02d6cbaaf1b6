#include "mmwloc/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

void add_common(CLI::App* sub, mmwloc::cli::CommonOptions& o, bool filter_flags) {
    sub->add_option("--config", o.config, "JSON config file or preset name (pedestrian, vehicular, accelerating)");
    sub->add_option("--seed", o.seed, "RNG seed, overrides the config");
    sub->add_option("--out", o.out, "output directory")->capture_default_str();
    sub->add_flag("--timing", o.timing, "record runtime and a timestamp (outputs are then not byte-reproducible)");
    if (!filter_flags) return;
    sub->add_flag("--no-gating", o.no_gating, "disable chi-square innovation gating");
    sub->add_flag("--no-adapt", o.no_adapt, "disable adaptive Q/R scaling");
    sub->add_flag("--no-smooth", o.no_smooth, "disable RTS smoothing");
    sub->add_flag("--flat", o.flat, "2-D mode: pin z and vz");
}

}  // namespace

int main(int argc, char** argv) {
    using namespace mmwloc::cli;
    CLI::App app{"mobility-aware hybrid localization"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    CommonOptions sim;
    auto* s = app.add_subcommand("simulate", "generate ground truth and a measurement CSV");
    add_common(s, sim, false);

    RunOptions run;
    auto* r = app.add_subcommand("run", "run the pipeline and write a report");
    add_common(r, run, true);
    r->add_option("--filter", run.filter, "ekf, ukf, ckf or hybrid");
    r->add_option("--input", run.input, "measurements CSV (simulated from the config when omitted)");

    CompareOptions cmp;
    auto* c = app.add_subcommand("compare", "seed-averaged metrics for the filter table");
    add_common(c, cmp, true);
    c->add_option("--filter", cmp.filter, "comma-separated rows: ekf,ukf,ckf,opt-ekf,opt-ukf,hybrid");
    c->add_option("--seeds", cmp.seeds, "seed list, e.g. 0-19 or 1,4,7");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    if (*s) return cmd_simulate(sim);
    if (*r) return cmd_run(run);
    return cmd_compare(cmp);
}
