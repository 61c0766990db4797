#pragma once
// Binds the two simulators and the observables to the generic ABC engine.

#include "pedabc/abc.hpp"
#include "pedabc/observables.hpp"
#include "pedabc/scenario.hpp"
#include "pedabc/sim_ca.hpp"
#include "pedabc/sim_sf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace pedabc {

enum class ModelKind { sf, ca };

inline std::string_view to_string(ModelKind m) { return m == ModelKind::sf ? "sf" : "ca"; }

inline std::vector<std::string> model_param_names(ModelKind m) {
    if (m == ModelKind::sf) return {"v0", "A", "B", "k", "kappa"};
    return {"S", "delta_t"};
}

inline PriorSpec default_prior(ModelKind m) {
    if (m == ModelKind::sf) {
        return {{{"v0", 0.5, 3.0, "m/s"},
                 {"A", 0.0, 3000.0, "N"},
                 {"B", 0.02, 1.0, "m"},
                 {"k", 0.0, 2.4e5, "kg/s^2"},
                 {"kappa", 0.0, 4.8e5, "kg/(m s)"}}};
    }
    return {{{"S", 0.0, 10.0, ""}, {"delta_t", 0.1, 1.0, "s"}}};
}

inline SfParams sf_params_from(const ParamVector& theta) {
    SfParams p{theta.at("v0"), theta.at("A"), theta.at("B"), theta.at("k"), theta.at("kappa")};
    p.validate();
    return p;
}

inline CaParams ca_params_from(const ParamVector& theta) {
    CaParams p{theta.at("S"), theta.at("delta_t")};
    p.validate();
    return p;
}

/// Rejects a prior whose parameter names differ from the model's.
inline void check_prior_matches(const PriorSpec& prior, ModelKind m) {
    prior.validate();
    const auto expected = model_param_names(m);
    auto names = prior.names();
    auto sorted_expected = expected;
    std::sort(names.begin(), names.end());
    std::sort(sorted_expected.begin(), sorted_expected.end());
    if (names != sorted_expected) {
        std::string list;
        for (const auto& n : expected) list += (list.empty() ? "" : ", ") + n;
        throw Error(ErrorKind::invalid_prior, "prior for model " + std::string(to_string(m)) +
                                                  " must name exactly: " + list);
    }
}

struct ModelSetup {
    ModelKind model = ModelKind::ca;
    ScenarioSpec scenario;
    std::vector<double> widths{1.2, 1.6, 2.0};
    SfConstants sf;
    CaOptions ca;
    ObservableOptions observables;
    MeasurementGrid grid;
    Metric metric = Metric::egress;
    int replicates_per_width = 1;
    // Stop egress runs as soon as the distance provably exceeds this; +inf disables.
    double early_reject_epsilon = std::numeric_limits<double>::infinity();
};

/// Per-width simulators for one model, built once and shared read-only.
class ModelEvaluator {
public:
    explicit ModelEvaluator(ModelSetup setup) : setup_(std::move(setup)) {
        if (setup_.widths.empty()) throw Error(ErrorKind::invalid_config, "no bottleneck widths");
        for (double w : setup_.widths) {
            ScenarioSpec spec = setup_.scenario;
            spec.bottleneck_width = w;
            if (setup_.model == ModelKind::sf)
                sf_worlds_.push_back(make_sf_world(spec, setup_.sf));
            else
                ca_worlds_.push_back(make_ca_world(spec, setup_.ca));
        }
    }

    const ModelSetup& setup() const { return setup_; }
    std::size_t width_count() const { return setup_.widths.size(); }

    TrajectoryLog run(const ParamVector& theta, std::size_t width_index, std::uint64_t seed,
                      const RunOptions& opts = {}) const {
        if (setup_.model == ModelKind::sf) return sf_run(sf_worlds_.at(width_index), sf_params_from(theta), seed, opts);
        return ca_run(ca_worlds_.at(width_index), ca_params_from(theta), seed, opts);
    }

    /// Run options that stop once the configured observable is fully determined.
    RunOptions observable_run_options() const {
        RunOptions opts;
        opts.record_samples = setup_.metric == Metric::speed_field;
        const auto needed = static_cast<std::size_t>(setup_.observables.skip + setup_.observables.span);
        if (setup_.metric == Metric::egress) {
            opts.stop = [needed](double, std::span<const double> exits) { return exits.size() >= needed; };
        } else {
            // One sample past the window end keeps its central difference.
            const double tail = sample_interval_hint();
            opts.stop = [needed, tail](double t, std::span<const double> exits) {
                return exits.size() >= needed && t > exits[needed - 1] + tail + 1e-9;
            };
        }
        return opts;
    }

    /// Observable of one replicate across all widths.
    Observable observe(const ParamVector& theta, std::uint64_t child_seed, int replicate = 0) const {
        const RunOptions opts = observable_run_options();
        if (setup_.metric == Metric::egress) {
            EgressObservable obs{setup_.widths, {}};
            for (std::size_t w = 0; w < width_count(); ++w) {
                const TrajectoryLog log = run(theta, w, simulation_seed(child_seed, w, replicate), opts);
                obs.values.push_back(egress_interval(log, setup_.observables.skip, setup_.observables.span));
            }
            return obs;
        }
        SpeedFieldObservable obs{setup_.widths, {}};
        for (std::size_t w = 0; w < width_count(); ++w) {
            const TrajectoryLog log = run(theta, w, simulation_seed(child_seed, w, replicate), opts);
            obs.fields.push_back(speed_field(log, setup_.observables, setup_.grid));
        }
        return obs;
    }

    /// Distance of one draw to the reference, averaged over replicates.
    double distance(const ParamVector& theta, std::uint64_t child_seed, const Observable& reference) const {
        const bool early = setup_.metric == Metric::egress && setup_.replicates_per_width == 1 &&
                           std::isfinite(setup_.early_reject_epsilon);
        if (early) return egress_distance_early(theta, child_seed, std::get<EgressObservable>(reference));
        double total = 0.0;
        for (int r = 0; r < setup_.replicates_per_width; ++r)
            total += observable_distance(observe(theta, child_seed, r), reference, setup_.observables.empty_cells);
        return total / setup_.replicates_per_width;
    }

private:
    double sample_interval_hint() const {
        // CA logs a sample every step, so one step past the window end suffices.
        return setup_.model == ModelKind::sf ? setup_.sf.sample_interval : 0.0;
    }

    // Width by width, abandoning the run once the interval exceeds what
    // epsilon still allows. Returns +inf for every abandoned draw.
    double egress_distance_early(const ParamVector& theta, std::uint64_t child_seed,
                                 const EgressObservable& ref) const {
        constexpr double inf = std::numeric_limits<double>::infinity();
        const int skip = setup_.observables.skip;
        const auto needed = static_cast<std::size_t>(skip + setup_.observables.span);
        const double eps_sq = setup_.early_reject_epsilon * setup_.early_reject_epsilon;
        if (ref.widths.size() != width_count()) throw Error(ErrorKind::shape_mismatch, "reference widths");
        double sum = 0.0;
        for (std::size_t w = 0; w < width_count(); ++w) {
            if (!ref.values[w]) throw Error(ErrorKind::missing_reference, "reference egress value missing");
            const double budget = std::sqrt(std::max(0.0, eps_sq - sum));
            const double max_interval = *ref.values[w] + budget;
            RunOptions opts;
            opts.record_samples = false;
            opts.stop = [&](double t, std::span<const double> exits) {
                if (exits.size() >= needed) return true;
                return exits.size() >= static_cast<std::size_t>(skip) &&
                       t - exits[static_cast<std::size_t>(skip) - 1] > max_interval;
            };
            const TrajectoryLog log = run(theta, w, simulation_seed(child_seed, w, 0), opts);
            const auto interval = egress_interval(log, skip, setup_.observables.span);
            if (!interval) return inf;
            const double d = *interval - *ref.values[w];
            sum += d * d;
            if (sum > eps_sq) return inf;
        }
        return std::sqrt(sum);
    }

    ModelSetup setup_;
    std::vector<SfWorld> sf_worlds_;
    std::vector<CaWorld> ca_worlds_;
};

/// Check that a reference observable fits the evaluator's metric and widths.
inline void check_reference(const ModelEvaluator& eval, const Observable& reference) {
    const auto& setup = eval.setup();
    const bool egress = std::holds_alternative<EgressObservable>(reference);
    if (egress != (setup.metric == Metric::egress))
        throw Error(ErrorKind::missing_reference, "reference observable does not match metric " +
                                                      std::string(to_string(setup.metric)));
    const auto& widths = egress ? std::get<EgressObservable>(reference).widths
                                : std::get<SpeedFieldObservable>(reference).widths;
    detail::require_same_widths(setup.widths, widths);
}

/// Rejection ABC of one model against a reference observable.
inline AbcResult abc_reject(const ModelEvaluator& eval, const PriorSpec& prior, const Observable& reference,
                            const AbcConfig& cfg, const ProgressFn& progress = {}) {
    check_prior_matches(prior, eval.setup().model);
    check_reference(eval, reference);
    return abc_reject(
        prior, cfg, [&](const ParamVector& theta, std::uint64_t seed) { return eval.distance(theta, seed, reference); },
        progress);
}

} // namespace pedabc
