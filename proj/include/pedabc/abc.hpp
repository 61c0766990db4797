#pragma once
// Rejection ABC: draw from a flat prior, simulate, keep draws whose distance
// to the reference is within epsilon. Acceptance rates of two models run at
// the same epsilon give the Bayes-factor estimate.

#include "pedabc/error.hpp"
#include "pedabc/rng.hpp"
#include "pedabc/stats.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace pedabc {

struct ParamRange {
    std::string name;
    double lo = 0.0;
    double hi = 1.0;
    std::string unit;
};

/// Independent uniform priors, one per named parameter, in a fixed order.
struct PriorSpec {
    std::vector<ParamRange> params;

    std::size_t size() const { return params.size(); }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (const ParamRange& p : params) out.push_back(p.name);
        return out;
    }

    void validate() const {
        if (params.empty()) throw Error(ErrorKind::invalid_prior, "prior has no parameters");
        for (std::size_t i = 0; i < params.size(); ++i) {
            const ParamRange& p = params[i];
            if (!(std::isfinite(p.lo) && std::isfinite(p.hi) && p.lo < p.hi))
                throw Error(ErrorKind::invalid_prior, "range of '" + p.name + "' must satisfy lo < hi");
            for (std::size_t j = 0; j < i; ++j)
                if (params[j].name == p.name)
                    throw Error(ErrorKind::invalid_prior, "parameter '" + p.name + "' listed twice");
        }
    }

    bool contains(std::span<const double> theta) const {
        if (theta.size() != params.size()) return false;
        for (std::size_t i = 0; i < theta.size(); ++i)
            if (!(theta[i] >= params[i].lo && theta[i] <= params[i].hi)) return false;
        return true;
    }
};

struct ParamVector {
    std::vector<std::string> names;
    std::vector<double> values;

    double at(std::string_view name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return values[i];
        throw Error(ErrorKind::invalid_config, "parameter '" + std::string(name) + "' not set");
    }

    friend bool operator==(const ParamVector&, const ParamVector&) = default;
};

inline ParamVector sample_prior(const PriorSpec& prior, Rng& rng) {
    ParamVector theta;
    theta.names.reserve(prior.size());
    theta.values.reserve(prior.size());
    for (const ParamRange& p : prior.params) {
        theta.names.push_back(p.name);
        theta.values.push_back(uniform(rng, p.lo, p.hi));
    }
    return theta;
}

enum class Metric { egress, speed_field };

inline std::string_view to_string(Metric m) { return m == Metric::egress ? "egress" : "speed_field"; }

struct AbcConfig {
    std::size_t n = 1000;
    double epsilon = 2.0;
    Metric metric = Metric::egress;
    std::vector<double> widths{1.2, 1.6, 2.0};
    std::uint64_t seed = 1;
    int replicates_per_width = 1;
    unsigned workers = 0;  // 0: one per hardware thread
    bool keep_all_draws = false;

    void validate() const {
        if (n < 1) throw Error(ErrorKind::invalid_config, "abc.n must be at least 1");
        if (!(epsilon > 0.0)) throw Error(ErrorKind::invalid_config, "abc.epsilon must be positive");
        if (widths.empty()) throw Error(ErrorKind::invalid_config, "at least one bottleneck width is required");
        if (replicates_per_width < 1) throw Error(ErrorKind::invalid_config, "replicates_per_width must be >= 1");
    }
};

/// One prior draw and its distance. `child_seed` regenerates the draw and
/// every simulation behind it.
struct AbcDraw {
    std::size_t draw = 0;
    std::uint64_t child_seed = 0;
    std::vector<double> theta;
    double distance = 0.0;

    friend bool operator==(const AbcDraw&, const AbcDraw&) = default;
};

struct AbcResult {
    std::vector<std::string> param_names;
    double epsilon = 0.0;
    std::size_t n_total = 0;
    std::size_t n_failed = 0;  // simulator errors, scored as +inf
    std::vector<AbcDraw> accepted;
    std::vector<AbcDraw> all_draws;  // filled only with keep_all_draws

    double acceptance_rate() const {
        return n_total == 0 ? 0.0 : static_cast<double>(accepted.size()) / static_cast<double>(n_total);
    }
};

inline std::uint64_t draw_seed(std::uint64_t master, std::size_t draw) { return derive_seed(master, {draw}); }

/// The prior draw behind a child seed.
inline ParamVector draw_theta(const PriorSpec& prior, std::uint64_t child_seed) {
    Rng rng = make_rng(derive_seed(child_seed, {0}));
    return sample_prior(prior, rng);
}

/// Seed of one simulation within a draw.
inline std::uint64_t simulation_seed(std::uint64_t child_seed, std::size_t width_index, int replicate) {
    return derive_seed(child_seed, {1, width_index, static_cast<std::uint64_t>(replicate)});
}

using DistanceFn = std::function<double(const ParamVector& theta, std::uint64_t child_seed)>;
using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

/// Draws with distance <= epsilon, in draw order.
inline AbcResult reject_at(std::span<const AbcDraw> draws, std::vector<std::string> names, double epsilon,
                           std::size_t n_total) {
    AbcResult r;
    r.param_names = std::move(names);
    r.epsilon = epsilon;
    r.n_total = n_total;
    for (const AbcDraw& d : draws)
        if (d.distance <= epsilon) r.accepted.push_back(d);
    return r;
}

/// Generic rejection sampler.
///
/// Draw i uses child seed derive(master, i); results are merged in draw
/// order, so the output does not depend on the worker count. Simulator
/// errors score +inf and are counted in n_failed.
inline AbcResult abc_reject(const PriorSpec& prior, const AbcConfig& cfg, const DistanceFn& distance,
                            const ProgressFn& progress = {}) {
    prior.validate();
    cfg.validate();
    unsigned workers = cfg.workers == 0 ? std::max(1u, std::thread::hardware_concurrency()) : cfg.workers;
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, cfg.n));

    struct Local {
        std::vector<AbcDraw> accepted;
        std::vector<AbcDraw> all;
        std::size_t failed = 0;
    };
    std::vector<Local> locals(workers);
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> done{0};
    std::mutex progress_mutex;
    const std::size_t step = std::max<std::size_t>(1, cfg.n / 100);
    constexpr std::size_t chunk = 8;

    auto work = [&](Local& local) {
        for (;;) {
            const std::size_t begin = next.fetch_add(chunk);
            if (begin >= cfg.n) break;
            const std::size_t end = std::min(cfg.n, begin + chunk);
            for (std::size_t i = begin; i < end; ++i) {
                const std::uint64_t seed = draw_seed(cfg.seed, i);
                ParamVector theta = draw_theta(prior, seed);
                double d;
                try {
                    d = distance(theta, seed);
                } catch (const Error&) {
                    d = std::numeric_limits<double>::infinity();
                    ++local.failed;
                }
                AbcDraw rec{i, seed, std::move(theta.values), d};
                if (d <= cfg.epsilon) local.accepted.push_back(rec);
                if (cfg.keep_all_draws) local.all.push_back(std::move(rec));
                const std::size_t finished = done.fetch_add(1) + 1;
                if (progress && (finished % step == 0 || finished == cfg.n)) {
                    std::lock_guard lock(progress_mutex);
                    progress(finished, cfg.n);
                }
            }
        }
    };

    if (workers == 1) {
        work(locals[0]);
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back([&, w] { work(locals[w]); });
    }

    AbcResult result;
    result.param_names = prior.names();
    result.epsilon = cfg.epsilon;
    result.n_total = cfg.n;
    for (Local& l : locals) {
        result.n_failed += l.failed;
        result.accepted.insert(result.accepted.end(), l.accepted.begin(), l.accepted.end());
        result.all_draws.insert(result.all_draws.end(), l.all.begin(), l.all.end());
    }
    auto by_draw = [](const AbcDraw& a, const AbcDraw& b) { return a.draw < b.draw; };
    std::sort(result.accepted.begin(), result.accepted.end(), by_draw);
    std::sort(result.all_draws.begin(), result.all_draws.end(), by_draw);
    return result;
}

/// 2 ln(rate_a / rate_b); positive values favour model A.
inline double bayes_factor(double rate_a, double rate_b) {
    if (!(rate_a > 0.0) || !(rate_b > 0.0) || !std::isfinite(rate_a) || !std::isfinite(rate_b))
        throw Error(ErrorKind::undefined_bf, "Bayes factor undefined for acceptance rates " +
                                                 std::to_string(rate_a) + " and " + std::to_string(rate_b));
    return 2.0 * std::log(rate_a / rate_b);
}

enum class Evidence { inconclusive, positive_for_a, positive_for_b };

/// Only |2 ln BF| > 2 counts as positive evidence.
inline Evidence evidence_verdict(double two_ln_bf) {
    if (two_ln_bf > 2.0) return Evidence::positive_for_a;
    if (two_ln_bf < -2.0) return Evidence::positive_for_b;
    return Evidence::inconclusive;
}

inline std::string_view to_string(Evidence e) {
    switch (e) {
    case Evidence::positive_for_a: return "positive evidence, model A";
    case Evidence::positive_for_b: return "positive evidence, model B";
    case Evidence::inconclusive: break;
    }
    return "inconclusive";
}

struct ParamSummary {
    std::string name;
    double mean = 0.0;
    double variance = 0.0;
    double q05 = 0.0;
    double q95 = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    std::vector<double> histogram;  // probability mass per bin over [lo, hi]
};

/// Marginal statistics of the accepted samples; histogram bins span the prior range.
inline std::vector<ParamSummary> posterior_summary(const AbcResult& result, const PriorSpec& prior, int bins) {
    if (result.accepted.empty()) throw Error(ErrorKind::empty_posterior, "no accepted samples");
    if (bins < 1) throw Error(ErrorKind::invalid_config, "histogram needs at least one bin");
    if (prior.size() != result.param_names.size())
        throw Error(ErrorKind::shape_mismatch, "prior does not match the result's parameters");
    std::vector<ParamSummary> out;
    for (std::size_t p = 0; p < prior.size(); ++p) {
        std::vector<double> xs;
        xs.reserve(result.accepted.size());
        for (const AbcDraw& d : result.accepted) xs.push_back(d.theta[p]);
        ParamSummary s;
        s.name = prior.params[p].name;
        s.lo = prior.params[p].lo;
        s.hi = prior.params[p].hi;
        s.mean = stats::mean(xs);
        s.variance = stats::variance(xs);
        std::sort(xs.begin(), xs.end());
        s.q05 = stats::quantile_sorted(xs, 0.05);
        s.q95 = stats::quantile_sorted(xs, 0.95);
        s.histogram.assign(static_cast<std::size_t>(bins), 0.0);
        const double w = (s.hi - s.lo) / bins;
        for (double x : xs) {
            int b = static_cast<int>(std::floor((x - s.lo) / w));
            b = std::clamp(b, 0, bins - 1);
            s.histogram[static_cast<std::size_t>(b)] += 1.0;
        }
        for (double& h : s.histogram) h /= static_cast<double>(xs.size());
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace pedabc
