// Acceptance gate: one PASS/FAIL line per criterion.
//
//   acceptance                   all criteria
//   acceptance --skip-desk-run   everything except the long two-model run (8)
//   acceptance --only N          a single criterion
//   acceptance --out DIR         also write the criterion 8 samples and manifests

#include "pedabc/pedabc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace pedabc;

namespace {

// Pinned tolerances.
constexpr double kBfTol = 0.01;
constexpr double kRelaxTol = 0.02;
constexpr double kProbTol = 1e-12;
constexpr double kFieldTol = 1e-12;
constexpr double kSigmas = 3.0;
constexpr double kMeanRelTol = 0.20;
constexpr double kKsAlpha = 0.01;

struct Verdict {
    bool pass = false;
    std::string detail;
};

constexpr double inf = std::numeric_limits<double>::infinity();

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

// 1 ---------------------------------------------------------------------------

Verdict bayes_factor_arithmetic() {
    const double a = bayes_factor(2.21e-4, 5.46e-4);
    const double b = bayes_factor(2.75e-4, 2.20e-5);
    const bool ok = std::abs(a - (-1.80)) <= kBfTol && std::abs(b - 5.04) <= kBfTol;
    return {ok, fmt("2 ln BF = %.4f and %.4f", a, b)};
}

// 2 ---------------------------------------------------------------------------

Verdict sf_relaxation() {
    ScenarioSpec spec;
    SfConstants c;
    c.dt = 0.05;
    const SfWorld world = make_sf_world(spec, c);
    SfParams p;
    SfAgentState a;
    a.id = 1;
    a.position = {5.0, 9.0};
    std::vector<SfAgentState> agents{a};
    double worst = 0.0;
    for (int step = 1; step <= 40; ++step) {
        const double t = step * c.dt;
        sf_step(agents, world, p, t);
        if (step == 10 || step == 20 || step == 40) {
            const double expected = p.v0 * (1.0 - std::exp(-t / c.tau));
            worst = std::max(worst, std::abs(norm(agents[0].velocity) - expected) / expected);
        }
    }
    return {worst <= kRelaxTol, fmt("max relative error %.2e at t in {0.5, 1, 2} s", worst)};
}

// 3 ---------------------------------------------------------------------------

// Direct evaluation of P ~ (1 + F)^S over free Moore cells plus the own cell.
std::array<double, 9> brute_force_probs(const CaState& s, const FloorField& f, GridIndex here, double S) {
    std::array<double, 9> w{};
    double total = 0.0;
    int k = 0;
    for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc, ++k) {
            const int r = here.row + dr, c = here.col + dc;
            const bool self = dr == 0 && dc == 0;
            if (r < 0 || r >= f.rows() || c < 0 || c >= f.cols()) continue;
            if (!self && (f.is_wall(r, c) || s.occupancy[s.index({r, c})])) continue;
            w[k] = std::pow(1.0 + f.value(r, c), S);
            total += w[k];
        }
    for (double& x : w) x /= total;
    return w;
}

Verdict ca_probability_oracle() {
    std::mt19937_64 rng(20240601);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    double worst = 0.0;
    bool sums = true, zeros = true;
    int done = 0;
    while (done < 50) {
        std::vector<std::uint8_t> walls(9);
        for (auto& w : walls) w = u01(rng) < 0.2;
        std::vector<GridIndex> exits;
        for (int i = 0; i < 9; ++i)
            if (!walls[i] && u01(rng) < 0.25) exits.push_back({i / 3, i % 3});
        std::vector<GridIndex> free;
        for (int i = 0; i < 9; ++i)
            if (!walls[i]) free.push_back({i / 3, i % 3});
        if (exits.empty() || free.empty()) continue;
        FloorField f;
        try {
            f = FloorField::from_mask(0.4, {0.0, 0.0}, 3, 3, walls, exits);
        } catch (const Error&) {
            continue;  // a free cell cut off from every exit
        }
        CaState s = ca_empty_state(f);
        const GridIndex here = free[std::uniform_int_distribution<std::size_t>(0, free.size() - 1)(rng)];
        ca_place(s, 1, here);
        int id = 2;
        for (const GridIndex& g : free)
            if (!(g == here) && u01(rng) < 0.4) ca_place(s, id++, g);
        const double S = 10.0 * u01(rng);
        std::size_t agent = 0;  // id 1 sorts first
        const CaDistribution d = ca_transition_probs(s, f, agent, S);
        const auto oracle = brute_force_probs(s, f, here, S);
        double sum = 0.0;
        for (int k = 0; k < 9; ++k) {
            worst = std::max(worst, std::abs(d[k].p - oracle[k]));
            sum += d[k].p;
            const GridIndex c = d[k].cell;
            if (k != 4 && s.blocked(c) && d[k].p != 0.0) zeros = false;
        }
        if (std::abs(sum - 1.0) > kProbTol) sums = false;
        ++done;
    }
    return {worst <= kProbTol && sums && zeros,
            fmt("50 configurations, max |P - oracle| = %.2e", worst) + (sums ? ", sums ok" : ", bad sum") +
                (zeros ? ", blocked cells 0" : ", blocked cell with P > 0")};
}

// 4 ---------------------------------------------------------------------------

Verdict ca_conflict_invariant() {
    ScenarioSpec spec;
    spec.room_width = 4.0;
    spec.room_height = 4.0;
    spec.bottleneck_width = 1.2;
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    long steps = 0;
    bool ok = true;
    std::string why;
    for (int trial = 0; trial < 100 && ok; ++trial) {
        // 10 x 10 room cells; fill 60-95 % of them.
        spec.pedestrian_count = 60 + static_cast<int>(36 * u01(rng));
        const CaWorld world = make_ca_world(spec);
        CaState s = ca_init(world, rng());
        const CaParams params{20.0 * u01(rng), 0.1 + 0.9 * u01(rng)};
        Rng step_rng = make_rng(rng());
        const int n = spec.pedestrian_count;
        for (int k = 0; k < 100; ++k, ++steps) {
            ca_step(s, world, params, step_rng);
            std::set<std::pair<int, int>> cells;
            std::set<int> ids;
            for (const CaAgent& a : s.agents) {
                if (!cells.insert({a.cell.row, a.cell.col}).second) {
                    ok = false;
                    why = "two agents on one cell";
                }
                if (world.field.is_wall(a.cell.row, a.cell.col)) {
                    ok = false;
                    why = "agent on a wall";
                }
                ids.insert(a.id);
            }
            // Every agent is either still present or logged as exited.
            for (int id : s.exit_ids) ids.insert(id);
            if (static_cast<int>(ids.size()) != n) {
                ok = false;
                why = "agent count not conserved";
            }
            if (!ok) break;
        }
    }
    return {ok && steps == 10000, std::to_string(steps) + " dense steps" + (ok ? ", no double occupancy" : ": " + why)};
}

// 5 ---------------------------------------------------------------------------

Verdict metric_oracles() {
    std::vector<std::string> problems;
    TrajectoryLog exits;
    for (int k = 0; k < 55; ++k) exits.exit_times.push_back(0.5 + 0.8 * k + 0.003 * k * k);
    const auto dt = egress_interval(exits);
    if (!dt || *dt != exits.exit_times[39] - exits.exit_times[9]) problems.push_back("egress interval");

    // Five samples of one pedestrian approaching the opening at (2, 0).
    TrajectoryLog log;
    log.sample_interval = 0.1;
    log.bottleneck_center = {2.0, 0.0};
    const double xy[5][2] = {{1.5, 1.0}, {1.55, 0.92}, {1.62, 0.85}, {1.66, 0.75}, {1.71, 0.70}};
    for (int k = 0; k < 5; ++k) log.samples.push_back({1, 0.1 * k, xy[k][0], xy[k][1]});
    const SpeedField f = speed_field(log, TimeWindow{0.0, 0.4});
    // Hand-computed: velocity (central differences) dotted with the unit vector to (2, 0).
    const double expect_75 = 0.9391485505499114, expect_74 = 0.9373551942700261, expect_84 = 1.0004568399328688;
    const double expect_83 = 0.5 * (0.8688859324469397 + 0.653298145693067);
    double err = 0.0;
    err = std::max(err, std::abs(f.mean[f.index(7, 5)] - expect_75));
    err = std::max(err, std::abs(f.mean[f.index(7, 4)] - expect_74));
    err = std::max(err, std::abs(f.mean[f.index(8, 4)] - expect_84));
    err = std::max(err, std::abs(f.mean[f.index(8, 3)] - expect_83));
    if (!(err <= kFieldTol)) problems.push_back("speed field");

    const EgressObservable ea{{1.2, 1.6, 2.0}, {9.68, 7.64, 5.20}};
    const EgressObservable eb{{1.2, 1.6, 2.0}, {10.1, 7.0, 6.0}};
    if (egress_distance(ea, ea) != 0.0 || egress_distance(ea, eb) != egress_distance(eb, ea))
        problems.push_back("egress distance identity/symmetry");

    SpeedField uniform(20, 10);
    std::fill(uniform.mean.begin(), uniform.mean.end(), 1.0);
    std::fill(uniform.count.begin(), uniform.count.end(), 1L);
    const SpeedFieldObservable sa{{1.2, 1.6, 2.0}, {uniform, uniform, uniform}};
    SpeedFieldObservable sb = sa;
    sb.fields[2]->mean[123] += 0.5;
    const double d = speed_field_distance(sa, sb);
    if (speed_field_distance(sa, sa) != 0.0 || d != speed_field_distance(sb, sa))
        problems.push_back("speed field distance identity/symmetry");
    if (std::abs(d - 0.5 / 3.0) > 1e-15) problems.push_back("one-cell perturbation");

    std::string detail = fmt("dT exact, field err %.1e, perturbation %.17g", err, d);
    for (const auto& p : problems) detail += "; failed " + p;
    return {problems.empty(), detail};
}

// 6 ---------------------------------------------------------------------------

Verdict identity_model() {
    const PriorSpec prior{{{"theta", 0.0, 1.0, ""}}};
    AbcConfig cfg;
    cfg.n = 100000;
    cfg.epsilon = 0.1;
    cfg.seed = 6;
    cfg.keep_all_draws = true;
    const double target = 0.5;
    const AbcResult r = abc_reject(prior, cfg, [&](const ParamVector& t, std::uint64_t) {
        return std::abs(t.values[0] - target);
    });
    std::vector<AbcDraw> refilter;
    for (const AbcDraw& d : r.all_draws)
        if (std::abs(d.theta[0] - target) <= cfg.epsilon) refilter.push_back(d);
    const bool same = refilter == r.accepted && r.all_draws.size() == cfg.n;
    const double sd = std::sqrt(0.2 * 0.8 / static_cast<double>(cfg.n));
    const double dev = std::abs(r.acceptance_rate() - 0.2) / sd;
    return {same && dev <= kSigmas,
            fmt("rate %.5f (%.2f sd from 0.2)", r.acceptance_rate(), dev) + (same ? ", re-filter identical" : ", re-filter differs")};
}

// 7 and 9 ---------------------------------------------------------------------

struct SelfCalibration {
    AbcResult posterior;
    double epsilon = 0.0;
    std::string csv;
};

ModelSetup small_room_setup() {
    ModelSetup s;
    s.model = ModelKind::ca;
    s.scenario.room_width = 6.0;
    s.scenario.room_height = 6.0;
    s.scenario.pedestrian_count = 20;
    // 20 pedestrians cannot reach the 40th exit; the window scales down with them.
    s.observables.skip = 5;
    s.observables.span = 10;
    return s;
}

SelfCalibration self_calibrate(unsigned workers) {
    const ModelEvaluator eval(small_room_setup());
    const ParamVector truth{{"S", "delta_t"}, {2.0, 0.3}};
    const Observable reference = eval.observe(truth, 424242);
    AbcConfig cfg;
    cfg.n = 20000;
    cfg.epsilon = inf;
    cfg.seed = 7;
    cfg.workers = workers;
    cfg.keep_all_draws = true;
    const AbcResult all = abc_reject(eval, default_prior(ModelKind::ca), reference, cfg);
    std::vector<double> distances;
    for (const AbcDraw& d : all.all_draws) distances.push_back(d.distance);
    SelfCalibration out;
    out.epsilon = stats::quantile(distances, 0.10);
    out.posterior = reject_at(all.all_draws, all.param_names, out.epsilon, all.n_total);
    out.csv = io::samples_csv(out.posterior);
    return out;
}

Verdict self_calibration(const SelfCalibration& sc) {
    std::vector<double> dt;
    for (const AbcDraw& d : sc.posterior.accepted) dt.push_back(d.theta[1]);
    if (dt.empty()) return {false, "empty posterior"};
    const double lo = stats::quantile(dt, 0.05), hi = stats::quantile(dt, 0.95), m = stats::mean(dt);
    const bool covers = lo <= 0.3 && 0.3 <= hi;
    const bool close = std::abs(m - 0.3) <= kMeanRelTol * 0.3;
    return {covers && close, fmt("eps %.3f s, delta_t 5-95%% [%.3f, %.3f], mean %.3f", sc.epsilon, lo, hi, m) +
                                 " (" + std::to_string(dt.size()) + " accepted)"};
}

Verdict worker_invariance(const SelfCalibration& one, unsigned n) {
    const SelfCalibration many = self_calibrate(n);
    const bool same = one.csv == many.csv && !one.csv.empty();
    return {same, "workers 1 vs " + std::to_string(n) + ": accepted CSV " + (same ? "identical" : "differs") + " (" +
                      std::to_string(one.csv.size()) + " bytes)"};
}

// 8 ---------------------------------------------------------------------------

struct DeskRun {
    AbcResult result;
    double ks_p = 1.0;
    double ks_d = 0.0;
};

DeskRun desk_calibrate(ModelKind model, const std::string& param, const std::optional<std::filesystem::path>& out) {
    const std::string m(to_string(model));
    const io::RunConfig c = io::load_run_config(
        std::nullopt, {"model=\"" + m + "\"", "abc.n=50000", "abc.epsilon=2.0", "abc.early_reject=true",
                       "abc.keep_all_draws=true", "abc.seed=8", "scenario.max_sim_time=60"});
    const Observable ref = io::load_reference(c);
    const ModelEvaluator eval(c.model_setup());
    const auto start = std::chrono::steady_clock::now();
    DeskRun run;
    run.result = abc_reject(eval, c.prior, ref, c.abc, [&](std::size_t done, std::size_t total) {
        if (done % (total / 10) != 0) return;
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::cerr << "  " << m << ": " << done << "/" << total << " draws, " << static_cast<long>(s) << " s\n";
    });
    const auto names = run.result.param_names;
    const std::size_t k = static_cast<std::size_t>(std::find(names.begin(), names.end(), param) - names.begin());
    std::vector<double> post, prior;
    for (const AbcDraw& d : run.result.accepted) post.push_back(d.theta[k]);
    for (const AbcDraw& d : run.result.all_draws) prior.push_back(d.theta[k]);
    if (!post.empty()) {
        const auto ks = stats::ks_two_sample(post, prior);
        run.ks_p = ks.p_value;
        run.ks_d = ks.statistic;
    }
    if (out) {
        const auto dir = *out / m;
        io::write_file(dir / "samples.csv", io::samples_csv(run.result));
        std::optional<std::vector<ParamSummary>> summary;
        if (!run.result.accepted.empty()) summary = posterior_summary(run.result, c.prior, c.histogram_bins);
        io::write_file(dir / "manifest.json",
                       io::make_manifest(c, ref, run.result, summary ? &*summary : nullptr).dump(2) + "\n");
    }
    return run;
}

Verdict desk_run(const std::optional<std::filesystem::path>& out) {
    const DeskRun sf = desk_calibrate(ModelKind::sf, "v0", out);
    const DeskRun ca = desk_calibrate(ModelKind::ca, "delta_t", out);
    auto part = [](const char* name, const DeskRun& r) {
        return std::string(name) + " " + std::to_string(r.result.accepted.size()) + "/" +
               std::to_string(r.result.n_total) + fmt(" (KS D %.3f, p %.2e)", r.ks_d, r.ks_p);
    };
    std::string detail = part("sf", sf) + ", " + part("ca", ca);
    if (!sf.result.accepted.empty() && !ca.result.accepted.empty())
        detail += fmt(", 2 ln BF(sf/ca) = %.2f", bayes_factor(sf.result.acceptance_rate(), ca.result.acceptance_rate()));
    const bool ok = !sf.result.accepted.empty() && !ca.result.accepted.empty() && sf.ks_p < kKsAlpha &&
                    ca.ks_p < kKsAlpha;
    return {ok, detail};
}

} // namespace

int main(int argc, char** argv) {
    bool skip_desk = false;
    std::optional<int> only;
    std::optional<std::filesystem::path> out;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--skip-desk-run") {
            skip_desk = true;
        } else if (a == "--only" && i + 1 < argc) {
            only = std::atoi(argv[++i]);
        } else if (a == "--out" && i + 1 < argc) {
            out = argv[++i];
        } else {
            std::cerr << "usage: acceptance [--skip-desk-run] [--only N] [--out DIR]\n";
            return 2;
        }
    }
    const unsigned many = std::max(4u, std::thread::hardware_concurrency());
    std::optional<SelfCalibration> sc;
    auto self_cal = [&]() -> const SelfCalibration& {
        if (!sc) sc = self_calibrate(1);
        return *sc;
    };

    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
        {"Bayes factor arithmetic", bayes_factor_arithmetic},
        {"SF relaxation", sf_relaxation},
        {"CA transition probability oracle", ca_probability_oracle},
        {"CA conflict resolution invariant", ca_conflict_invariant},
        {"metric oracles", metric_oracles},
        {"ABC identity model", identity_model},
        {"CA self-calibration", [&] { return self_calibration(self_cal()); }},
        {"desk-scale two-model run", [&] { return desk_run(out); }},
        {"worker count invariance", [&] { return worker_invariance(self_cal(), many); }},
    };

    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int number = static_cast<int>(i) + 1;
        if (only && *only != number) continue;
        if (!only && skip_desk && number == 8) {
            std::cout << "SKIP " << number << " " << criteria[i].first << " (run with --only 8)\n";
            continue;
        }
        const auto start = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::cout << (v.pass ? "PASS " : "FAIL ") << number << " " << criteria[i].first << ": " << v.detail
                  << fmt(" [%.1f s]", s) << std::endl;
        failed += !v.pass;
    }
    return failed == 0 ? 0 : 1;
}
