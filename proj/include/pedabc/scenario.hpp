#pragma once
// Bottleneck-egress geometry and the static floor field both models navigate by.
//
// Room frame: the room occupies x in [0, room_width], y in [0, room_height].
// The bottleneck is a corridor of depth `bottleneck_depth` cut through the
// bottom wall, centred on x = room_width / 2 and opening towards -y. Below the
// wall lies an open outside strip where agents walk until they are removed.

#include "pedabc/error.hpp"
#include "pedabc/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace pedabc {

struct ScenarioSpec {
    double room_width = 10.0;
    double room_height = 10.0;
    double bottleneck_width = 2.0;
    double bottleneck_depth = 0.4;
    int pedestrian_count = 70;
    // Distance beyond the outer bottleneck plane at which agents are removed.
    double removal_distance = 1.0;
    double max_sim_time = 200.0;

    double exit_plane_y() const { return -bottleneck_depth; }
    double removal_y() const { return -bottleneck_depth - removal_distance; }
    double opening_x_min() const { return 0.5 * (room_width - bottleneck_width); }
    double opening_x_max() const { return 0.5 * (room_width + bottleneck_width); }
    Vec2 bottleneck_center() const { return {0.5 * room_width, 0.0}; }
};

/// Validate scenario parameters and return the spec.
inline ScenarioSpec build_scenario(const ScenarioSpec& params) {
    auto fail = [](const std::string& what) { throw Error(ErrorKind::invalid_geometry, what); };
    auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
    if (!positive(params.room_width) || !positive(params.room_height))
        fail("room dimensions must be positive");
    if (!positive(params.bottleneck_width)) fail("bottleneck width must be positive");
    if (params.bottleneck_width >= params.room_width)
        fail("bottleneck width " + std::to_string(params.bottleneck_width) +
             " m must be smaller than the wall it sits in (" + std::to_string(params.room_width) + " m)");
    if (!positive(params.bottleneck_depth)) fail("bottleneck depth must be positive");
    if (!positive(params.removal_distance)) fail("removal distance must be positive");
    if (params.pedestrian_count < 1) fail("pedestrian count must be at least 1");
    if (!std::isfinite(params.max_sim_time) || params.max_sim_time < 0.0)
        fail("max_sim_time must be non-negative");
    return params;
}

/// Discretisation of the scenario on a square lattice.
///
/// Rows are counted from the bottom (row 0 is the outermost outside row),
/// columns from x = 0. Exit cells are the whole bottom row.
struct LatticeLayout {
    double cell_size = 0.0;
    Vec2 origin;  // lower-left corner of cell (0, 0)
    int cols = 0;
    int rows = 0;
    int outside_rows = 0;
    int corridor_rows = 0;
    int room_rows = 0;
    int exit_col_begin = 0;
    int exit_col_count = 0;

    int corridor_row_begin() const { return outside_rows; }
    int room_row_begin() const { return outside_rows + corridor_rows; }
};

namespace detail {

inline int exact_cell_count(double length, double cell_size, const char* what) {
    const double ratio = length / cell_size;
    const double rounded = std::round(ratio);
    if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-6)
        throw Error(ErrorKind::invalid_geometry,
                    std::string("cell size ") + std::to_string(cell_size) + " m does not divide the " + what);
    return static_cast<int>(rounded);
}

} // namespace detail

inline LatticeLayout lattice_layout(const ScenarioSpec& spec, double cell_size) {
    if (!(std::isfinite(cell_size) && cell_size > 0.0))
        throw Error(ErrorKind::invalid_geometry, "cell size must be positive");
    LatticeLayout l;
    l.cell_size = cell_size;
    l.cols = detail::exact_cell_count(spec.room_width, cell_size, "room width");
    l.room_rows = detail::exact_cell_count(spec.room_height, cell_size, "room height");
    l.corridor_rows = detail::exact_cell_count(spec.bottleneck_depth, cell_size, "bottleneck depth");
    // One spare row past the removal line so removed agents never leave the grid.
    l.outside_rows = static_cast<int>(std::ceil((spec.removal_distance + cell_size) / cell_size - 1e-9));
    l.rows = l.outside_rows + l.corridor_rows + l.room_rows;
    l.origin = {0.0, -(spec.bottleneck_depth + l.outside_rows * cell_size)};
    l.exit_col_count = static_cast<int>(std::lround(spec.bottleneck_width / cell_size));
    if (l.exit_col_count < 1)
        throw Error(ErrorKind::invalid_geometry, "bottleneck narrower than one lattice cell");
    if (l.exit_col_count >= l.cols)
        throw Error(ErrorKind::invalid_geometry, "bottleneck spans the whole wall on this lattice");
    l.exit_col_begin = (l.cols - l.exit_col_count) / 2;
    return l;
}

struct GridIndex {
    int row = 0;
    int col = 0;
    friend constexpr bool operator==(GridIndex, GridIndex) = default;
};

/// Static floor field: values in [0, 1], 1 on exit cells, 0 on walls and on
/// the farthest reachable cell.
class FloorField {
public:
    FloorField() = default;

    /// Geodesic distance transform of an arbitrary lattice.
    ///
    /// Distances are shortest 8-connected paths (diagonal cost sqrt(2) * cell)
    /// to the nearest exit cell; a diagonal step is only allowed when both
    /// orthogonal cells it passes are free. Throws no-path if a free cell
    /// cannot reach any exit.
    static FloorField from_mask(double cell_size, Vec2 origin, int rows, int cols,
                                std::vector<std::uint8_t> wall_mask, std::span<const GridIndex> exit_cells);

    double cell_size() const { return cell_size_; }
    Vec2 origin() const { return origin_; }
    int rows() const { return rows_; }
    int cols() const { return cols_; }

    bool in_bounds(int row, int col) const { return row >= 0 && row < rows_ && col >= 0 && col < cols_; }
    double value(int row, int col) const { return values_[index(row, col)]; }
    bool is_wall(int row, int col) const { return wall_[index(row, col)] != 0; }
    bool is_exit(int row, int col) const { return exit_flag_[index(row, col)] != 0; }
    /// Geodesic distance to the nearest exit (infinite on walls).
    double distance(int row, int col) const { return distance_[index(row, col)]; }
    const std::vector<GridIndex>& exit_cells() const { return exits_; }
    const std::vector<double>& values() const { return values_; }
    const std::vector<std::uint8_t>& wall_mask() const { return wall_; }

    Vec2 center(int row, int col) const {
        return {origin_.x + (col + 0.5) * cell_size_, origin_.y + (row + 0.5) * cell_size_};
    }

    double x_max() const { return origin_.x + cols_ * cell_size_; }
    double y_max() const { return origin_.y + rows_ * cell_size_; }

    bool contains(Vec2 p) const {
        return p.x >= origin_.x && p.x <= x_max() && p.y >= origin_.y && p.y <= y_max();
    }

    std::optional<GridIndex> cell_of(Vec2 p) const {
        if (!contains(p)) return std::nullopt;
        int col = static_cast<int>(std::floor((p.x - origin_.x) / cell_size_));
        int row = static_cast<int>(std::floor((p.y - origin_.y) / cell_size_));
        col = std::clamp(col, 0, cols_ - 1);
        row = std::clamp(row, 0, rows_ - 1);
        return GridIndex{row, col};
    }

    std::size_t index(int row, int col) const {
        return static_cast<std::size_t>(row) * static_cast<std::size_t>(cols_) + static_cast<std::size_t>(col);
    }

private:
    double cell_size_ = 0.0;
    Vec2 origin_;
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> values_;
    std::vector<double> distance_;
    std::vector<std::uint8_t> wall_;
    std::vector<std::uint8_t> exit_flag_;
    std::vector<GridIndex> exits_;
};

inline FloorField FloorField::from_mask(double cell_size, Vec2 origin, int rows, int cols,
                                        std::vector<std::uint8_t> wall_mask,
                                        std::span<const GridIndex> exit_cells) {
    if (rows < 1 || cols < 1 || !(cell_size > 0.0))
        throw Error(ErrorKind::invalid_geometry, "floor field needs a non-empty grid");
    const std::size_t n = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    if (wall_mask.size() != n) throw Error(ErrorKind::invalid_geometry, "wall mask size does not match grid");
    if (exit_cells.empty()) throw Error(ErrorKind::no_path, "no exit cells");

    FloorField f;
    f.cell_size_ = cell_size;
    f.origin_ = origin;
    f.rows_ = rows;
    f.cols_ = cols;
    f.wall_ = std::move(wall_mask);
    f.exit_flag_.assign(n, 0);
    f.distance_.assign(n, std::numeric_limits<double>::infinity());
    f.values_.assign(n, 0.0);

    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
    for (const GridIndex& e : exit_cells) {
        if (!f.in_bounds(e.row, e.col)) throw Error(ErrorKind::invalid_geometry, "exit cell outside grid");
        const std::size_t k = f.index(e.row, e.col);
        if (f.wall_[k]) throw Error(ErrorKind::invalid_geometry, "exit cell lies on a wall");
        if (f.exit_flag_[k]) continue;
        f.exit_flag_[k] = 1;
        f.exits_.push_back(e);
        f.distance_[k] = 0.0;
        open.emplace(0.0, k);
    }

    const double diag = std::sqrt(2.0) * cell_size;
    auto free_cell = [&](int r, int c) { return f.in_bounds(r, c) && !f.wall_[f.index(r, c)]; };
    while (!open.empty()) {
        const auto [d, k] = open.top();
        open.pop();
        if (d > f.distance_[k]) continue;
        const int r = static_cast<int>(k / static_cast<std::size_t>(cols));
        const int c = static_cast<int>(k % static_cast<std::size_t>(cols));
        for (int dr = -1; dr <= 1; ++dr) {
            for (int dc = -1; dc <= 1; ++dc) {
                if (dr == 0 && dc == 0) continue;
                const int nr = r + dr;
                const int nc = c + dc;
                if (!free_cell(nr, nc)) continue;
                const bool diagonal = dr != 0 && dc != 0;
                if (diagonal && !(free_cell(r + dr, c) && free_cell(r, c + dc))) continue;
                const double nd = d + (diagonal ? diag : cell_size);
                const std::size_t nk = f.index(nr, nc);
                if (nd < f.distance_[nk]) {
                    f.distance_[nk] = nd;
                    open.emplace(nd, nk);
                }
            }
        }
    }

    double d_max = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        if (f.wall_[k]) continue;
        if (!std::isfinite(f.distance_[k])) {
            throw Error(ErrorKind::no_path,
                        "exit unreachable from cell (" + std::to_string(k / static_cast<std::size_t>(cols)) + ", " +
                            std::to_string(k % static_cast<std::size_t>(cols)) + ")");
        }
        d_max = std::max(d_max, f.distance_[k]);
    }
    for (std::size_t k = 0; k < n; ++k) {
        if (f.wall_[k]) continue;
        f.values_[k] = d_max > 0.0 ? (d_max - f.distance_[k]) / d_max : 1.0;
    }
    return f;
}

/// Wall mask of the scenario on its lattice: only the wall pierced by the
/// bottleneck is represented by cells, the room boundary is the grid boundary.
inline std::vector<std::uint8_t> scenario_wall_mask(const LatticeLayout& l) {
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(l.rows) * static_cast<std::size_t>(l.cols), 0);
    for (int r = l.corridor_row_begin(); r < l.room_row_begin(); ++r) {
        for (int c = 0; c < l.cols; ++c) {
            const bool opening = c >= l.exit_col_begin && c < l.exit_col_begin + l.exit_col_count;
            if (!opening) mask[static_cast<std::size_t>(r) * static_cast<std::size_t>(l.cols) + c] = 1;
        }
    }
    return mask;
}

inline FloorField build_floor_field(const ScenarioSpec& spec, double cell_size) {
    const LatticeLayout l = lattice_layout(spec, cell_size);
    std::vector<GridIndex> exits;
    exits.reserve(static_cast<std::size_t>(l.cols));
    for (int c = 0; c < l.cols; ++c) exits.push_back({0, c});
    return FloorField::from_mask(cell_size, l.origin, l.rows, l.cols, scenario_wall_mask(l), exits);
}

/// Gradient of the bilinear interpolant of F through the cell centres.
inline Vec2 floor_field_gradient(const FloorField& field, Vec2 p) {
    const double h = field.cell_size();
    const double u = (p.x - field.origin().x) / h - 0.5;
    const double v = (p.y - field.origin().y) / h - 0.5;
    const int c0 = std::clamp(static_cast<int>(std::floor(u)), 0, std::max(field.cols() - 2, 0));
    const int r0 = std::clamp(static_cast<int>(std::floor(v)), 0, std::max(field.rows() - 2, 0));
    const int c1 = std::min(c0 + 1, field.cols() - 1);
    const int r1 = std::min(r0 + 1, field.rows() - 1);
    const double tx = std::clamp(u - c0, 0.0, 1.0);
    const double ty = std::clamp(v - r0, 0.0, 1.0);
    const double f00 = field.value(r0, c0);
    const double f01 = field.value(r0, c1);
    const double f10 = field.value(r1, c0);
    const double f11 = field.value(r1, c1);
    const double gx = c1 == c0 ? 0.0 : ((1.0 - ty) * (f01 - f00) + ty * (f11 - f10)) / h;
    const double gy = r1 == r0 ? 0.0 : ((1.0 - tx) * (f10 - f00) + tx * (f11 - f01)) / h;
    return {gx, gy};
}

/// Unit direction of steepest ascent of the floor field at `p`.
///
/// Falls back to the direction of the nearest exit-cell centroid where the
/// gradient vanishes, and to (0, -1) on the centroid itself.
inline Vec2 guidance_direction(const FloorField& field, Vec2 p) {
    if (!is_finite(p) || !field.contains(p))
        throw Error(ErrorKind::out_of_domain,
                    "position (" + std::to_string(p.x) + ", " + std::to_string(p.y) + ") outside floor field");
    const Vec2 g = floor_field_gradient(field, p);
    const double g_norm = norm(g);
    if (g_norm >= 1e-9) return g / g_norm;

    double best = std::numeric_limits<double>::infinity();
    Vec2 to_exit{0.0, 0.0};
    for (const GridIndex& e : field.exit_cells()) {
        const Vec2 d = field.center(e.row, e.col) - p;
        const double dn = norm_sq(d);
        if (dn < best) {
            best = dn;
            to_exit = d;
        }
    }
    const double len = norm(to_exit);
    if (len < 1e-12) return {0.0, -1.0};
    return to_exit / len;
}

} // namespace pedabc
