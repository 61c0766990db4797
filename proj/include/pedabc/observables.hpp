#pragma once
// Egress-interval and directed speed-field measures, and the distances used
// to compare simulated against reference observables.

#include "pedabc/error.hpp"
#include "pedabc/geometry.hpp"
#include "pedabc/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace pedabc {

enum class EmptyCellRule {
    zero_fill,          // empty cells count as 0 m/s on either side
    exclude_pairwise,   // cells empty on either side are left out
};

struct ObservableOptions {
    int skip = 10;   // exits before the measured interval
    int span = 30;   // exits inside it
    EmptyCellRule empty_cells = EmptyCellRule::zero_fill;
};

/// Measurement area in front of the bottleneck. Local coordinates put the
/// bottleneck centre at (width_m / 2, 0) with y growing into the room.
struct MeasurementGrid {
    double cell = 0.2;
    int nx = 20;
    int ny = 10;

    double width_m() const { return nx * cell; }
    double depth_m() const { return ny * cell; }
};

struct EgressObservable {
    std::vector<double> widths;
    std::vector<std::optional<double>> values;  // unavailable when too few exits

    friend bool operator==(const EgressObservable&, const EgressObservable&) = default;
};

/// Mean directed speed per cell, stored row-major with row 0 nearest the bottleneck.
struct SpeedField {
    int nx = 20;
    int ny = 10;
    std::vector<double> mean;
    std::vector<long> count;

    SpeedField() = default;
    SpeedField(int nx_, int ny_)
        : nx(nx_), ny(ny_), mean(static_cast<std::size_t>(nx_ * ny_), 0.0),
          count(static_cast<std::size_t>(nx_ * ny_), 0) {}

    std::size_t index(int ix, int iy) const { return static_cast<std::size_t>(iy * nx + ix); }
    bool empty(std::size_t cell) const { return count[cell] == 0; }

    friend bool operator==(const SpeedField&, const SpeedField&) = default;
};

struct SpeedFieldObservable {
    std::vector<double> widths;
    std::vector<std::optional<SpeedField>> fields;

    friend bool operator==(const SpeedFieldObservable&, const SpeedFieldObservable&) = default;
};

using Observable = std::variant<EgressObservable, SpeedFieldObservable>;

struct TimeWindow {
    double start = 0.0;
    double end = 0.0;
};

/// Exit-time window from the `skip`-th to the (`skip` + `span`)-th exit (1-based).
inline std::optional<TimeWindow> egress_window(const TrajectoryLog& log, int skip = 10, int span = 30) {
    if (skip < 1 || span < 1) throw Error(ErrorKind::invalid_config, "egress skip and span must be positive");
    const auto last = static_cast<std::size_t>(skip + span);
    if (log.exit_times.size() < last) return std::nullopt;
    return TimeWindow{log.exit_times[static_cast<std::size_t>(skip) - 1], log.exit_times[last - 1]};
}

/// t_(skip+span) - t_skip, or nothing when the log has too few exits.
inline std::optional<double> egress_interval(const TrajectoryLog& log, int skip = 10, int span = 30) {
    const auto w = egress_window(log, skip, span);
    if (!w) return std::nullopt;
    return w->end - w->start;
}

struct VelocitySample {
    std::size_t sample = 0;  // index into TrajectoryLog::samples
    Vec2 velocity;
};

/// Finite-difference velocity for every sample that has a neighbour on its track.
///
/// Interior samples use central differences, track ends use forward or
/// backward differences. A gap longer than 1.5 sample intervals splits a track.
inline std::vector<VelocitySample> estimate_velocities(const TrajectoryLog& log) {
    std::map<int, std::vector<std::size_t>> tracks;
    for (std::size_t i = 0; i < log.samples.size(); ++i) tracks[log.samples[i].id].push_back(i);

    std::vector<VelocitySample> out;
    out.reserve(log.samples.size());
    const double max_gap = log.sample_interval > 0.0 ? 1.5 * log.sample_interval
                                                     : std::numeric_limits<double>::infinity();
    for (auto& [id, idx] : tracks) {
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return log.samples[a].t < log.samples[b].t; });
        auto linked = [&](std::size_t a, std::size_t b) {
            const double dt = log.samples[b].t - log.samples[a].t;
            return dt > 0.0 && dt <= max_gap;
        };
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const bool has_prev = k > 0 && linked(idx[k - 1], idx[k]);
            const bool has_next = k + 1 < idx.size() && linked(idx[k], idx[k + 1]);
            if (!has_prev && !has_next) continue;
            const TrajectorySample& a = log.samples[has_prev ? idx[k - 1] : idx[k]];
            const TrajectorySample& b = log.samples[has_next ? idx[k + 1] : idx[k]];
            const double dt = b.t - a.t;
            out.push_back({idx[k], Vec2{(b.x - a.x) / dt, (b.y - a.y) / dt}});
        }
    }
    std::sort(out.begin(), out.end(), [](const VelocitySample& a, const VelocitySample& b) { return a.sample < b.sample; });
    return out;
}

/// Cell of a local measurement-frame coordinate. Cells are half-open, so a
/// point on a boundary belongs to the cell with the larger index.
inline std::optional<std::pair<int, int>> measurement_cell(const MeasurementGrid& g, Vec2 local) {
    constexpr double snap = 1e-9;
    const int ix = static_cast<int>(std::floor(local.x / g.cell + snap));
    const int iy = static_cast<int>(std::floor(local.y / g.cell + snap));
    if (local.x < -snap * g.cell || local.y < -snap * g.cell) return std::nullopt;
    if (ix < 0 || ix >= g.nx || iy < 0 || iy >= g.ny) return std::nullopt;
    return std::pair{ix, iy};
}

/// Mean speed towards the bottleneck centre per measurement cell, over the
/// samples whose time lies in `window` (inclusive).
inline SpeedField speed_field(const TrajectoryLog& log, TimeWindow window, const MeasurementGrid& grid = {}) {
    SpeedField field(grid.nx, grid.ny);
    std::vector<double> sum(field.mean.size(), 0.0);
    const Vec2 offset{log.bottleneck_center.x - 0.5 * grid.width_m(), log.bottleneck_center.y};
    for (const VelocitySample& v : estimate_velocities(log)) {
        const TrajectorySample& s = log.samples[v.sample];
        if (s.t < window.start || s.t > window.end) continue;
        const Vec2 p{s.x, s.y};
        const auto cell = measurement_cell(grid, p - offset);
        if (!cell) continue;
        const Vec2 to_center = log.bottleneck_center - p;
        const double len = norm(to_center);
        const double directed = len > 0.0 ? dot(v.velocity, to_center) / len : 0.0;
        const std::size_t k = field.index(cell->first, cell->second);
        sum[k] += directed;
        ++field.count[k];
    }
    for (std::size_t k = 0; k < sum.size(); ++k)
        field.mean[k] = field.count[k] > 0 ? sum[k] / static_cast<double>(field.count[k]) : 0.0;
    return field;
}

/// Speed field over the egress window; nothing when the window is unavailable.
inline std::optional<SpeedField> speed_field(const TrajectoryLog& log, const ObservableOptions& opts,
                                             const MeasurementGrid& grid = {}) {
    const auto w = egress_window(log, opts.skip, opts.span);
    if (!w) return std::nullopt;
    return speed_field(log, *w, grid);
}

namespace detail {

inline void require_same_widths(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        throw Error(ErrorKind::shape_mismatch, "observables cover " + std::to_string(a.size()) + " and " +
                                                   std::to_string(b.size()) + " widths");
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::abs(a[i] - b[i]) > 1e-9)
            throw Error(ErrorKind::shape_mismatch, "width " + std::to_string(a[i]) + " paired with " +
                                                       std::to_string(b[i]));
    }
}

} // namespace detail

/// Euclidean distance between egress intervals across widths; +inf when any is missing.
inline double egress_distance(const EgressObservable& sim, const EgressObservable& ref) {
    detail::require_same_widths(sim.widths, ref.widths);
    double sum = 0.0;
    for (std::size_t i = 0; i < sim.values.size(); ++i) {
        if (!sim.values[i] || !ref.values[i]) return std::numeric_limits<double>::infinity();
        const double d = *sim.values[i] - *ref.values[i];
        sum += d * d;
    }
    return std::sqrt(sum);
}

inline double speed_field_norm_distance(const SpeedField& sim, const SpeedField& ref, EmptyCellRule rule) {
    if (sim.nx != ref.nx || sim.ny != ref.ny || sim.mean.size() != ref.mean.size())
        throw Error(ErrorKind::shape_mismatch, "speed field grids differ in shape");
    double sum = 0.0;
    for (std::size_t k = 0; k < sim.mean.size(); ++k) {
        if (rule == EmptyCellRule::exclude_pairwise && (sim.empty(k) || ref.empty(k))) continue;
        const double a = sim.empty(k) ? 0.0 : sim.mean[k];
        const double b = ref.empty(k) ? 0.0 : ref.mean[k];
        sum += (a - b) * (a - b);
    }
    return std::sqrt(sum);
}

/// Per-width Euclidean distance between fields, averaged over widths.
inline double speed_field_distance(const SpeedFieldObservable& sim, const SpeedFieldObservable& ref,
                                   EmptyCellRule rule = EmptyCellRule::zero_fill) {
    detail::require_same_widths(sim.widths, ref.widths);
    if (sim.widths.empty()) throw Error(ErrorKind::shape_mismatch, "speed field observable has no widths");
    double total = 0.0;
    for (std::size_t i = 0; i < sim.fields.size(); ++i) {
        if (!ref.fields[i])
            throw Error(ErrorKind::missing_reference, "reference speed field missing for width " +
                                                          std::to_string(ref.widths[i]));
        if (!sim.fields[i]) return std::numeric_limits<double>::infinity();
        total += speed_field_norm_distance(*sim.fields[i], *ref.fields[i], rule);
    }
    return total / static_cast<double>(sim.fields.size());
}

inline double observable_distance(const Observable& sim, const Observable& ref,
                                  EmptyCellRule rule = EmptyCellRule::zero_fill) {
    if (sim.index() != ref.index())
        throw Error(ErrorKind::shape_mismatch, "simulated and reference observables use different metrics");
    if (const auto* e = std::get_if<EgressObservable>(&sim))
        return egress_distance(*e, std::get<EgressObservable>(ref));
    return speed_field_distance(std::get<SpeedFieldObservable>(sim), std::get<SpeedFieldObservable>(ref), rule);
}

} // namespace pedabc
