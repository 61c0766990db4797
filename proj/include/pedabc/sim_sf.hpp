#pragma once
// Continuous-space social-force simulator.
//
// Force law (per agent i):
//   F_i = m (v0 e_i - v_i) / tau + sum_j f_ij + sum_W f_iW
//   f_ij = (A exp((r_ij - d_ij) / B) + k g(r_ij - d_ij)) n_ij
//          + kappa g(r_ij - d_ij) ((v_j - v_i) . t_ij) t_ij,   g(x) = max(x, 0)
// Walls are zero-radius, zero-velocity bodies at their nearest point.

#include "pedabc/error.hpp"
#include "pedabc/geometry.hpp"
#include "pedabc/rng.hpp"
#include "pedabc/scenario.hpp"
#include "pedabc/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pedabc {

/// The five fitted social-force parameters.
struct SfParams {
    double v0 = 1.5;       // preferred speed, m/s
    double A = 2000.0;     // psychological interaction strength, N
    double B = 0.08;       // psychological interaction range, m
    double k = 1.2e5;      // body compression, kg/s^2
    double kappa = 2.4e5;  // sliding friction, kg/(m s)

    void validate() const {
        auto bad = [](const std::string& what) { throw Error(ErrorKind::invalid_config, "SF parameter " + what); };
        if (!(std::isfinite(v0) && std::isfinite(A) && std::isfinite(B) && std::isfinite(k) && std::isfinite(kappa)))
            bad("values must be finite");
        if (!(v0 > 0.0)) bad("v0 must be positive");
        if (!(B > 0.0)) bad("B must be positive");
        if (A < 0.0 || k < 0.0 || kappa < 0.0) bad("A, k and kappa must be non-negative");
    }
};

/// Non-fitted constants of the model and integrator.
struct SfConstants {
    double mass = 80.0;
    double tau = 0.5;
    double radius = 0.25;
    double dt = 0.05;
    double speed_clamp_factor = 2.0;
    double guidance_cell_size = 0.1;
    double sample_interval = 0.1;
    // Pairs whose psychological force is below this are skipped; 0 evaluates every pair.
    double force_cutoff = 1e-3;
    int max_placement_attempts = 100000;
};

struct SfAgentState {
    int id = 0;
    Vec2 position;
    Vec2 velocity;
    double radius = 0.25;
    double mass = 80.0;
    std::optional<double> exited;
    bool removed = false;

    friend bool operator==(const SfAgentState&, const SfAgentState&) = default;
};

/// Everything a run needs that does not depend on the fitted parameters.
/// Immutable once built; share freely across concurrent runs.
struct SfWorld {
    ScenarioSpec spec;
    FloorField field;
    std::vector<Segment> walls;
    std::vector<Rect> solids;
    SfConstants constants;
};

inline SfWorld make_sf_world(const ScenarioSpec& spec, const SfConstants& constants = {}) {
    SfWorld w;
    w.spec = build_scenario(spec);
    w.constants = constants;
    w.field = build_floor_field(w.spec, constants.guidance_cell_size);

    const double W = spec.room_width;
    const double H = spec.room_height;
    const double xl = spec.opening_x_min();
    const double xr = spec.opening_x_max();
    const double yd = spec.exit_plane_y();
    const double yb = w.field.origin().y;
    constexpr double big = 1e6;
    w.walls = {
        {{0.0, 0.0}, {0.0, H}},   {{W, 0.0}, {W, H}},   {{0.0, H}, {W, H}},
        {{0.0, 0.0}, {xl, 0.0}},  {{xr, 0.0}, {W, 0.0}},
        {{0.0, yd}, {xl, yd}},    {{xr, yd}, {W, yd}},
        {{xl, yd}, {xl, 0.0}},    {{xr, yd}, {xr, 0.0}},
        {{0.0, yb}, {0.0, yd}},   {{W, yb}, {W, yd}},
    };
    w.solids = {
        {-big, yd, xl, 0.0},
        {xr, yd, big, 0.0},
        {-big, -big, 0.0, big},
        {W, -big, big, big},
        {-big, H, big, big},
    };
    return w;
}

namespace detail {

inline Vec2 coincident_normal(int id_i, int id_j) {
    const auto lo = static_cast<std::uint64_t>(static_cast<std::uint32_t>(std::min(id_i, id_j)));
    const auto hi = static_cast<std::uint64_t>(static_cast<std::uint32_t>(std::max(id_i, id_j)));
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(mix64((lo << 32) | hi) >> 11) * 0x1.0p-53;
    const Vec2 n{std::cos(angle), std::sin(angle)};
    return id_i < id_j ? n : -n;
}

inline double interaction_cutoff(double contact, const SfParams& p, double force_cutoff) {
    if (force_cutoff <= 0.0) return std::numeric_limits<double>::infinity();
    if (p.A <= force_cutoff) return contact;
    return contact + p.B * std::log(p.A / force_cutoff);
}

} // namespace detail

/// Interaction force exerted by agent j on agent i.
inline Vec2 sf_pair_force(const SfAgentState& i, const SfAgentState& j, const SfParams& p) {
    const Vec2 diff = i.position - j.position;
    const double d = std::sqrt(norm_sq(diff));
    const Vec2 n = d < 1e-6 ? detail::coincident_normal(i.id, j.id) : diff / d;
    const Vec2 t = perp(n);
    const double overlap = i.radius + j.radius - d;
    const double g = overlap > 0.0 ? overlap : 0.0;
    const double normal = p.A * std::exp(overlap / p.B) + p.k * g;
    const double tangential = p.kappa * g * dot(j.velocity - i.velocity, t);
    return n * normal + t * tangential;
}

inline Vec2 sf_wall_force(const SfAgentState& i, const Segment& wall, const SfParams& p) {
    const Vec2 diff = i.position - closest_point(wall, i.position);
    const double d = std::sqrt(norm_sq(diff));
    Vec2 n;
    if (d < 1e-6) {
        // Centre on the wall line: push along the segment normal.
        const Vec2 along = wall.b - wall.a;
        n = perp(along) / norm(along);
    } else {
        n = diff / d;
    }
    const Vec2 t = perp(n);
    const double overlap = i.radius - d;
    const double g = overlap > 0.0 ? overlap : 0.0;
    const double normal = p.A * std::exp(overlap / p.B) + p.k * g;
    const double tangential = p.kappa * g * dot(-i.velocity, t);
    return n * normal + t * tangential;
}

inline Vec2 sf_driving_force(const SfAgentState& a, const SfWorld& world, const SfParams& p) {
    const Vec2 e = guidance_direction(world.field, a.position);
    return (p.v0 * e - a.velocity) * (a.mass / world.constants.tau);
}

/// Total force on agent i: driving term, all other active agents and all walls.
inline Vec2 sf_forces(std::span<const SfAgentState> agents, std::size_t i, const SfWorld& world, const SfParams& p) {
    const SfAgentState& self = agents[i];
    Vec2 f = sf_driving_force(self, world, p);
    for (std::size_t j = 0; j < agents.size(); ++j) {
        if (j == i || agents[j].removed) continue;
        f += sf_pair_force(self, agents[j], p);
    }
    for (const Segment& w : world.walls) f += sf_wall_force(self, w, p);
    return f;
}

namespace detail {

/// Interaction forces (everything except the driving term) on all active
/// agents, each pair evaluated once. Pairs beyond the cutoff are skipped.
inline void interaction_forces(std::span<const SfAgentState> agents, const SfWorld& world, const SfParams& p,
                               std::vector<Vec2>& out) {
    out.assign(agents.size(), Vec2{});
    const double reach = interaction_cutoff(0.0, p, world.constants.force_cutoff);
    thread_local std::vector<std::size_t> active;
    active.clear();
    for (std::size_t i = 0; i < agents.size(); ++i)
        if (!agents[i].removed) active.push_back(i);
    for (std::size_t ai = 0; ai < active.size(); ++ai) {
        const std::size_t i = active[ai];
        const SfAgentState& a = agents[i];
        for (std::size_t aj = ai + 1; aj < active.size(); ++aj) {
            const std::size_t j = active[aj];
            const SfAgentState& b = agents[j];
            const double cut = a.radius + b.radius + reach;
            const Vec2 diff = a.position - b.position;
            if (norm_sq(diff) > cut * cut) continue;
            const Vec2 f = sf_pair_force(a, b, p);
            out[i] += f;
            out[j] -= f;
        }
        const double wall_cut = a.radius + reach;
        for (const Segment& w : world.walls) {
            if (norm_sq(a.position - closest_point(w, a.position)) > wall_cut * wall_cut) continue;
            out[i] += sf_wall_force(a, w, p);
        }
    }
}

/// Push a centre that ended up inside solid wall material back to the nearest
/// face and drop the velocity component pointing into it.
inline void resolve_solids(SfAgentState& a, std::span<const Rect> solids) {
    for (const Rect& s : solids) {
        Vec2& x = a.position;
        if (!(x.x > s.x_min && x.x < s.x_max && x.y > s.y_min && x.y < s.y_max)) continue;
        const double to_left = x.x - s.x_min;
        const double to_right = s.x_max - x.x;
        const double to_bottom = x.y - s.y_min;
        const double to_top = s.y_max - x.y;
        const double m = std::min({to_left, to_right, to_bottom, to_top});
        if (m == to_left) {
            x.x = s.x_min;
            a.velocity.x = std::min(a.velocity.x, 0.0);
        } else if (m == to_right) {
            x.x = s.x_max;
            a.velocity.x = std::max(a.velocity.x, 0.0);
        } else if (m == to_bottom) {
            x.y = s.y_min;
            a.velocity.y = std::min(a.velocity.y, 0.0);
        } else {
            x.y = s.y_max;
            a.velocity.y = std::max(a.velocity.y, 0.0);
        }
    }
}

} // namespace detail

/// Place agents uniformly at random in the room, pairwise non-overlapping and
/// at least one radius from the walls, at rest. Ids run from 1.
inline std::vector<SfAgentState> sf_init(const ScenarioSpec& spec, const SfConstants& c, std::uint64_t seed) {
    const double r = c.radius;
    if (spec.room_width <= 2.0 * r || spec.room_height <= 2.0 * r)
        throw Error(ErrorKind::placement_failure, "room too small for one agent");
    Rng rng = make_rng(seed);
    std::vector<SfAgentState> agents;
    agents.reserve(static_cast<std::size_t>(spec.pedestrian_count));
    int attempts = 0;
    while (static_cast<int>(agents.size()) < spec.pedestrian_count) {
        if (++attempts > c.max_placement_attempts)
            throw Error(ErrorKind::placement_failure, "could not place " + std::to_string(spec.pedestrian_count) +
                                                          " agents without overlap");
        const Vec2 p{uniform(rng, r, spec.room_width - r), uniform(rng, r, spec.room_height - r)};
        bool clear = true;
        for (const SfAgentState& o : agents) {
            if (norm_sq(o.position - p) <= 4.0 * r * r) {
                clear = false;
                break;
            }
        }
        if (!clear) continue;
        SfAgentState a;
        a.id = static_cast<int>(agents.size()) + 1;
        a.position = p;
        a.radius = r;
        a.mass = c.mass;
        agents.push_back(a);
    }
    return agents;
}

/// Advance all active agents by one time step ending at `t_after`.
///
/// The linear relaxation towards v0 e is integrated exactly over the step;
/// interaction forces use an explicit Euler update. Speeds are clamped to
/// speed_clamp_factor * v0. Agents crossing the outer bottleneck plane are
/// stamped with `t_after`; agents past the removal line are deactivated.
inline void sf_step(std::span<SfAgentState> agents, const SfWorld& world, const SfParams& p, double t_after,
                    std::vector<Vec2>& scratch) {
    const SfConstants& c = world.constants;
    detail::interaction_forces(agents, world, p, scratch);
    const double decay = std::exp(-c.dt / c.tau);
    const double v_max = c.speed_clamp_factor * p.v0;
    for (std::size_t i = 0; i < agents.size(); ++i) {
        SfAgentState& a = agents[i];
        if (a.removed) continue;
        const Vec2 target = p.v0 * guidance_direction(world.field, a.position);
        Vec2 v = target + (a.velocity - target) * decay + scratch[i] * (c.dt / a.mass);
        const double speed = norm(v);
        if (speed > v_max) v *= v_max / speed;
        a.velocity = v;
        a.position += v * c.dt;
        detail::resolve_solids(a, world.solids);
        if (!is_finite(a.position) || !is_finite(a.velocity))
            throw Error(ErrorKind::numerical_blowup, "non-finite state for agent " + std::to_string(a.id));
    }
    for (SfAgentState& a : agents) {
        if (a.removed) continue;
        if (!a.exited && a.position.y < world.spec.exit_plane_y()) a.exited = t_after;
        if (a.position.y <= world.spec.removal_y()) a.removed = true;
    }
}

inline void sf_step(std::span<SfAgentState> agents, const SfWorld& world, const SfParams& p, double t_after) {
    std::vector<Vec2> scratch;
    sf_step(agents, world, p, t_after, scratch);
}

inline TrajectoryLog sf_run(const SfWorld& world, const SfParams& p, std::uint64_t seed, const RunOptions& opts = {}) {
    p.validate();
    const SfConstants& c = world.constants;
    std::vector<SfAgentState> agents = sf_init(world.spec, c, seed);

    TrajectoryLog log;
    log.sample_interval = c.sample_interval;
    log.bottleneck_center = world.spec.bottleneck_center();
    const long stride = std::max(1L, std::lround(c.sample_interval / c.dt));
    const long max_steps = static_cast<long>(std::floor(world.spec.max_sim_time / c.dt + 1e-9));

    auto record = [&](long step) {
        if (!opts.record_samples) return;
        const double t = static_cast<double>(step / stride) * c.sample_interval;
        for (const SfAgentState& a : agents) {
            if (!a.removed) log.samples.push_back({a.id, t, a.position.x, a.position.y});
        }
    };

    record(0);
    std::size_t exited = 0;
    std::vector<Vec2> scratch;
    for (long step = 1; step <= max_steps && exited < agents.size(); ++step) {
        const double t = static_cast<double>(step) * c.dt;
        sf_step(agents, world, p, t, scratch);
        // Agents are id-ordered, so same-step exits are logged by id.
        for (const SfAgentState& a : agents) {
            if (a.exited && *a.exited == t) {
                log.exit_times.push_back(t);
                log.exit_ids.push_back(a.id);
                ++exited;
            }
        }
        if (step % stride == 0) record(step);
        if (opts.stop && opts.stop(t, log.exit_times)) break;
    }
    log.complete = exited == agents.size();
    return log;
}

} // namespace pedabc
