#pragma once
// Command-line front end: simulate, observable, calibrate, compare.
// Exit status 0 on success, 1 on validation errors, 2 on runtime failures.

#include "pedabc/abc.hpp"
#include "pedabc/calibration.hpp"
#include "pedabc/error.hpp"
#include "pedabc/io.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <exception>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace pedabc::cli {

struct CommonArgs {
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> workers;
    std::string out;
    std::string model;
};

namespace detail {

inline void add_common(CLI::App* cmd, CommonArgs& a, bool with_model) {
    cmd->add_option("--config", a.config, "JSON run configuration")->check(CLI::ExistingFile);
    cmd->add_option("--set", a.sets, "override a configuration key, e.g. abc.n=5000")->take_all();
    cmd->add_option("--seed", a.seed, "master seed (abc.seed)");
    cmd->add_option("--workers", a.workers, "worker threads, 0 = all cores (abc.workers)");
    cmd->add_option("--out", a.out, "output directory");
    if (with_model) cmd->add_option("--model", a.model, "sf or ca")->check(CLI::IsMember({"sf", "ca"}));
}

/// Builds the run configuration. With `bare_params`, a key without a dot that
/// is not a top-level setting names a parameter of the selected model.
inline io::RunConfig build_config(const CommonArgs& a, bool bare_params) {
    io::ConfigDocument c = io::load_config_document(a.config.empty() ? std::nullopt
                                                                       : std::optional<io::fs::path>(a.config));
    if (!a.model.empty()) c.doc["model"] = a.model;
    const io::json schema = io::default_config_json();
    for (const std::string& s : a.sets) {
        const auto eq = s.find('=');
        const std::string key = s.substr(0, eq);
        if (bare_params && eq != std::string::npos && key.find('.') == std::string::npos && !schema.contains(key)) {
            const std::string model = c.doc["model"].is_string() ? c.doc["model"].get<std::string>() : "";
            const auto names = model_param_names(io::parse_model(model));
            if (std::find(names.begin(), names.end(), key) == names.end())
                throw Error(ErrorKind::invalid_config, "unknown parameter '" + key + "' for model " + model);
            io::apply_override(c.doc, "params." + model + "." + s);
        } else {
            io::apply_override(c.doc, s);
        }
    }
    if (a.seed) c.doc["abc"]["seed"] = *a.seed;
    if (a.workers) c.doc["abc"]["workers"] = *a.workers;
    if (!a.out.empty()) c.doc["output"] = a.out;
    return io::interpret_config(c.doc, c.base_dir);
}

inline std::string fixed(double v, int digits) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(digits) << v;
    return ss.str();
}

inline std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}

} // namespace detail

inline int cmd_simulate(const CommonArgs& a, std::ostream& out) {
    const io::RunConfig c = detail::build_config(a, true);
    ModelSetup setup = c.model_setup();
    const ModelEvaluator eval(setup);
    const std::uint64_t seed = c.abc.seed;
    EgressObservable eg{c.widths, {}};
    SpeedFieldObservable sfo{c.widths, {}};
    for (std::size_t w = 0; w < c.widths.size(); ++w) {
        const std::string key = io::width_key(c.widths[w]);
        const TrajectoryLog log = eval.run(c.params, w, simulation_seed(seed, w, 0));
        io::write_file(c.output / ("trajectories_w" + key + ".csv"), io::trajectory_csv(log));
        io::write_file(c.output / ("exits_w" + key + ".csv"), io::exits_csv(log));
        eg.values.push_back(egress_interval(log, c.observables.skip, c.observables.span));
        sfo.fields.push_back(speed_field(log, c.observables, c.grid));
    }
    io::write_file(c.output / "egress.csv", io::egress_csv(eg));
    io::write_file(c.output / "speed_field.csv", io::speed_field_csv(sfo));
    out << "simulate " << to_string(c.model) << " seed=" << seed;
    for (std::size_t w = 0; w < c.widths.size(); ++w)
        out << " dT(" << io::width_key(c.widths[w]) << ")=" << (eg.values[w] ? detail::fixed(*eg.values[w], 2) : "NA");
    out << " -> " << c.output.string() << "\n";
    return 0;
}

inline int cmd_observable(const CommonArgs& a, std::ostream& out) {
    const io::RunConfig c = detail::build_config(a, false);
    const Observable ref = io::load_reference(c);
    const std::string name = c.abc.metric == Metric::egress ? "egress.csv" : "speed_field.csv";
    io::write_file(c.output / name, io::observable_csv(ref));
    out << "observable " << to_string(c.abc.metric) << " from " << c.reference.source << " -> "
        << (c.output / name).string() << "\n";
    return 0;
}

inline int cmd_calibrate(const CommonArgs& a, std::ostream& out, std::ostream& err) {
    const io::RunConfig c = detail::build_config(a, false);
    const Observable ref = io::load_reference(c);
    const ModelEvaluator eval(c.model_setup());
    const AbcResult r = abc_reject(eval, c.prior, ref, c.abc, [&](std::size_t done, std::size_t total) {
        err << "calibrate " << to_string(c.model) << ": " << (100 * done / total) << "% (" << done << "/" << total
            << " draws)\n";
    });
    io::write_file(c.output / "samples.csv", io::samples_csv(r));
    if (c.abc.keep_all_draws) io::write_file(c.output / "draws.csv", io::samples_csv(r, true));
    std::optional<std::vector<ParamSummary>> post;
    if (!r.accepted.empty()) {
        post = posterior_summary(r, c.prior, c.histogram_bins);
        io::write_file(c.output / "histograms.csv", io::histograms_csv(*post));
    } else {
        err << "warning: empty posterior, no draw within epsilon " << r.epsilon << "\n";
    }
    const io::json manifest = io::make_manifest(c, ref, r, post ? &*post : nullptr);
    io::write_file(c.output / "manifest.json", manifest.dump(2) + "\n");
    out << "calibrate " << to_string(c.model) << " metric=" << to_string(c.abc.metric) << " accepted "
        << r.accepted.size() << "/" << r.n_total << " rate=" << detail::sci(r.acceptance_rate());
    if (r.n_failed) out << " failed=" << r.n_failed;
    out << " -> " << c.output.string() << "\n";
    return 0;
}

inline int cmd_compare(const std::string& path_a, const std::string& path_b, std::ostream& out) {
    const io::ManifestSummary a = io::read_manifest(path_a);
    const io::ManifestSummary b = io::read_manifest(path_b);
    io::check_compatible(a, b);
    const double x = bayes_factor(a.acceptance_rate, b.acceptance_rate);
    out << "model A: " << a.model << " rate=" << detail::sci(a.acceptance_rate) << "\n";
    out << "model B: " << b.model << " rate=" << detail::sci(b.acceptance_rate) << "\n";
    out << "2 ln BF = " << detail::fixed(x, 2) << "\n";
    out << "verdict: " << to_string(evidence_verdict(x)) << "\n";
    return 0;
}

/// Parses arguments and runs one subcommand; never throws.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Rejection-ABC calibration of pedestrian bottleneck models", "pedabc"};
    app.require_subcommand(1);
    CommonArgs sim_args, obs_args, cal_args;
    std::string manifest_a, manifest_b;
    auto* sim = app.add_subcommand("simulate", "run one model at explicit parameters");
    detail::add_common(sim, sim_args, true);
    auto* obs = app.add_subcommand("observable", "extract the reference observable");
    detail::add_common(obs, obs_args, false);
    auto* cal = app.add_subcommand("calibrate", "rejection ABC against the reference");
    detail::add_common(cal, cal_args, true);
    auto* cmp = app.add_subcommand("compare", "2 ln Bayes factor of two calibration manifests");
    cmp->add_option("manifest_a", manifest_a, "manifest of model A")->required()->check(CLI::ExistingFile);
    cmp->add_option("manifest_b", manifest_b, "manifest of model B")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        std::ostringstream o, e2;
        const int code = app.exit(e, o, e2);
        out << o.str();
        err << e2.str();
        return code == 0 ? 0 : 1;
    }

    try {
        if (sim->parsed()) return cmd_simulate(sim_args, out);
        if (obs->parsed()) return cmd_observable(obs_args, out);
        if (cal->parsed()) return cmd_calibrate(cal_args, out, err);
        return cmd_compare(manifest_a, manifest_b, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return is_validation_error(e.kind()) ? 1 : 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
}

} // namespace pedabc::cli
