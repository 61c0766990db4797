#pragma once
// Discrete-space floor-field cellular automaton.
//
// Each step every agent draws a target from the Moore neighbourhood (plus its
// own cell) with probability
//   P_ij = ([1 + F_ij][1 - M_ij])^S / C
// where M marks walls and occupied cells. Moves are applied synchronously;
// when several agents pick the same cell only the one with the highest P for
// it moves.

#include "pedabc/error.hpp"
#include "pedabc/rng.hpp"
#include "pedabc/scenario.hpp"
#include "pedabc/trajectory.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace pedabc {

struct CaParams {
    double S = 2.0;        // floor-field sensitivity
    double delta_t = 0.3;  // update interval, s

    void validate() const {
        if (!(std::isfinite(S) && S >= 0.0))
            throw Error(ErrorKind::invalid_config, "CA parameter S must be finite and >= 0");
        if (!(std::isfinite(delta_t) && delta_t > 0.0))
            throw Error(ErrorKind::invalid_config, "CA parameter delta_t must be positive");
    }
};

struct CaOptions {
    double cell_size = 0.4;
    // Whether staying put is one of the candidate moves.
    bool include_stay = true;
};

struct CaWorld {
    ScenarioSpec spec;
    LatticeLayout layout;
    FloorField field;
    CaOptions options;

    Vec2 opening_center() const {
        const double x = layout.origin.x + (layout.exit_col_begin + 0.5 * layout.exit_col_count) * layout.cell_size;
        return {x, 0.0};
    }
};

inline CaWorld make_ca_world(const ScenarioSpec& spec, const CaOptions& options = {}) {
    CaWorld w;
    w.spec = build_scenario(spec);
    w.options = options;
    w.layout = lattice_layout(w.spec, options.cell_size);
    w.field = build_floor_field(w.spec, options.cell_size);
    return w;
}

struct CaAgent {
    int id = 0;
    GridIndex cell;
    bool exited = false;
    friend bool operator==(const CaAgent&, const CaAgent&) = default;
};

/// Lattice occupancy plus agents (sorted by id). `occupancy` is 1 on walls and
/// on cells holding an agent.
struct CaState {
    int rows = 0;
    int cols = 0;
    std::vector<std::uint8_t> occupancy;
    std::vector<CaAgent> agents;
    long step_count = 0;
    double sim_time = 0.0;
    std::vector<double> exit_log;
    std::vector<int> exit_ids;

    bool in_bounds(GridIndex c) const { return c.row >= 0 && c.row < rows && c.col >= 0 && c.col < cols; }
    std::size_t index(GridIndex c) const {
        return static_cast<std::size_t>(c.row) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c.col);
    }
    /// Out-of-bounds cells count as blocked.
    bool blocked(GridIndex c) const { return !in_bounds(c) || occupancy[index(c)] != 0; }
};

/// Empty state: walls only.
inline CaState ca_empty_state(const FloorField& field) {
    CaState s;
    s.rows = field.rows();
    s.cols = field.cols();
    s.occupancy = field.wall_mask();
    return s;
}

/// Place an agent on a free cell; used by ca_init and to build test states.
inline void ca_place(CaState& s, int id, GridIndex cell) {
    if (s.blocked(cell))
        throw Error(ErrorKind::insufficient_cells, "cell (" + std::to_string(cell.row) + ", " +
                                                       std::to_string(cell.col) + ") is not free");
    s.occupancy[s.index(cell)] = 1;
    CaAgent a{id, cell, false};
    auto pos = std::lower_bound(s.agents.begin(), s.agents.end(), id,
                                [](const CaAgent& x, int v) { return x.id < v; });
    s.agents.insert(pos, a);
}

/// Distinct uniformly random room cells for every pedestrian.
inline CaState ca_init(const CaWorld& world, std::uint64_t seed) {
    const LatticeLayout& l = world.layout;
    std::vector<GridIndex> free_cells;
    for (int r = l.room_row_begin(); r < l.rows; ++r)
        for (int c = 0; c < l.cols; ++c)
            if (!world.field.is_wall(r, c)) free_cells.push_back({r, c});
    const auto n = static_cast<std::size_t>(world.spec.pedestrian_count);
    if (free_cells.size() < n)
        throw Error(ErrorKind::insufficient_cells, std::to_string(n) + " pedestrians but only " +
                                                       std::to_string(free_cells.size()) + " free cells");
    Rng rng = make_rng(seed);
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(uniform_index(rng, free_cells.size() - i));
        std::swap(free_cells[i], free_cells[j]);
    }
    CaState s = ca_empty_state(world.field);
    s.agents.reserve(n);
    for (std::size_t i = 0; i < n; ++i) ca_place(s, static_cast<int>(i) + 1, free_cells[i]);
    return s;
}

struct CaCandidate {
    GridIndex cell;
    double p = 0.0;
};

/// Candidate moves in row-major Moore order; index 4 is the current cell.
using CaDistribution = std::array<CaCandidate, 9>;

/// Transition probabilities of one agent.
///
/// The agent's own cell counts as free. Blocked cells get probability 0 even
/// for S = 0. If every weight vanishes the agent stays with probability 1.
inline CaDistribution ca_transition_probs(const CaState& state, const FloorField& field, std::size_t agent,
                                          double S, bool include_stay = true) {
    const GridIndex here = state.agents[agent].cell;
    CaDistribution out{};
    std::array<double, 9> log_w{};
    std::array<bool, 9> open{};
    double max_log = -std::numeric_limits<double>::infinity();
    int k = 0;
    for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc, ++k) {
            const GridIndex c{here.row + dr, here.col + dc};
            out[k].cell = c;
            const bool self = dr == 0 && dc == 0;
            if (self ? !include_stay : state.blocked(c)) continue;
            open[k] = true;
            log_w[k] = S * std::log1p(field.value(c.row, c.col));
            max_log = std::max(max_log, log_w[k]);
        }
    }
    double total = 0.0;
    for (int i = 0; i < 9; ++i) {
        if (!open[i]) continue;
        out[i].p = std::exp(log_w[i] - max_log);
        total += out[i].p;
    }
    if (total == 0.0) {
        out[4].p = 1.0;
        return out;
    }
    for (CaCandidate& c : out) c.p /= total;
    return out;
}

struct CaClaim {
    std::size_t agent = 0;  // index into CaState::agents
    GridIndex target;
    double p = 0.0;
};

/// Resolve claims on contested cells: per target, the claimant with the
/// highest P wins; exact ties are broken by a uniform draw. Returns one flag
/// per claim telling whether it moves.
inline std::vector<bool> ca_resolve_claims(std::span<const CaClaim> claims, int cols, Rng& rng) {
    std::vector<std::size_t> order(claims.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto key = [&](std::size_t i) {
        return static_cast<long>(claims[i].target.row) * cols + claims[i].target.col;
    };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
    std::vector<bool> moves(claims.size(), false);
    std::vector<std::size_t> tied;
    for (std::size_t begin = 0; begin < order.size();) {
        std::size_t end = begin + 1;
        while (end < order.size() && key(order[end]) == key(order[begin])) ++end;
        double best = -1.0;
        for (std::size_t i = begin; i < end; ++i) best = std::max(best, claims[order[i]].p);
        tied.clear();
        for (std::size_t i = begin; i < end; ++i)
            if (claims[order[i]].p == best) tied.push_back(order[i]);
        const std::size_t winner = tied.size() == 1 ? tied[0] : tied[uniform_index(rng, tied.size())];
        moves[winner] = true;
        begin = end;
    }
    return moves;
}

/// Sample one index from a distribution with a single uniform draw.
inline std::size_t ca_sample(const CaDistribution& dist, Rng& rng) {
    const double u = uniform01(rng);
    double acc = 0.0;
    std::size_t last = 4;
    for (std::size_t i = 0; i < dist.size(); ++i) {
        if (dist[i].p <= 0.0) continue;
        acc += dist[i].p;
        last = i;
        if (u < acc) return i;
    }
    return last;
}

/// One synchronous update of all agents.
inline void ca_step(CaState& state, const CaWorld& world, const CaParams& params, Rng& rng) {
    std::vector<CaClaim> claims;
    claims.reserve(state.agents.size());
    for (std::size_t i = 0; i < state.agents.size(); ++i) {
        const CaDistribution dist =
            ca_transition_probs(state, world.field, i, params.S, world.options.include_stay);
        const std::size_t pick = ca_sample(dist, rng);
        if (pick == 4) continue;
        claims.push_back({i, dist[pick].cell, dist[pick].p});
    }
    const std::vector<bool> moves = ca_resolve_claims(claims, state.cols, rng);
    for (std::size_t c = 0; c < claims.size(); ++c) {
        if (!moves[c]) continue;
        CaAgent& a = state.agents[claims[c].agent];
        state.occupancy[state.index(a.cell)] = 0;
        a.cell = claims[c].target;
        state.occupancy[state.index(a.cell)] = 1;
    }

    ++state.step_count;
    state.sim_time = static_cast<double>(state.step_count) * params.delta_t;

    constexpr double tol = 1e-9;
    const double exit_y = world.spec.exit_plane_y();
    const double removal_y = world.spec.removal_y();
    std::vector<CaAgent> kept;
    kept.reserve(state.agents.size());
    for (CaAgent& a : state.agents) {
        const double y = world.field.center(a.cell.row, a.cell.col).y;
        if (!a.exited && y < exit_y - tol) {
            a.exited = true;
            state.exit_log.push_back(state.sim_time);
            state.exit_ids.push_back(a.id);
        }
        if (y <= removal_y + tol) {
            state.occupancy[state.index(a.cell)] = 0;
            continue;
        }
        kept.push_back(a);
    }
    state.agents = std::move(kept);
}

inline TrajectoryLog ca_run(const CaWorld& world, const CaParams& params, std::uint64_t seed,
                            const RunOptions& opts = {}) {
    params.validate();
    CaState state = ca_init(world, seed);
    Rng rng = make_rng(derive_seed(seed, {1}));

    TrajectoryLog log;
    log.sample_interval = params.delta_t;
    log.bottleneck_center = world.opening_center();
    const std::size_t total = state.agents.size();
    auto record = [&] {
        if (!opts.record_samples) return;
        for (const CaAgent& a : state.agents) {
            const Vec2 p = world.field.center(a.cell.row, a.cell.col);
            log.samples.push_back({a.id, state.sim_time, p.x, p.y});
        }
    };

    record();
    const long max_steps = static_cast<long>(std::floor(world.spec.max_sim_time / params.delta_t + 1e-9));
    while (state.step_count < max_steps && state.exit_log.size() < total) {
        ca_step(state, world, params, rng);
        record();
        if (opts.stop && opts.stop(state.sim_time, state.exit_log)) break;
    }
    log.exit_times = state.exit_log;
    log.exit_ids = state.exit_ids;
    log.complete = state.exit_log.size() == total;
    return log;
}

} // namespace pedabc
