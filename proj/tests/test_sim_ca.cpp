#include "pedabc/sim_ca.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

using namespace pedabc;

namespace {

// 3x3 open grid with the exit at the bottom-left, so F varies in both axes.
FloorField small_field() {
    return FloorField::from_mask(1.0, {0.0, 0.0}, 3, 3, std::vector<std::uint8_t>(9, 0),
                                 std::vector<GridIndex>{{0, 0}});
}

CaWorld world(double w = 1.6, int peds = 70) {
    ScenarioSpec s;
    s.bottleneck_width = w;
    s.pedestrian_count = peds;
    return make_ca_world(s);
}

} // namespace

TEST(CaProbs, HandCaseTwoCandidates) {
    // Centre cell F = 0.5 (free), one free neighbour with F = 1.0, the rest blocked.
    const FloorField f = FloorField::from_mask(1.0, {0.0, 0.0}, 3, 3, std::vector<std::uint8_t>(9, 0),
                                               std::vector<GridIndex>{{0, 0}});
    CaState s = ca_empty_state(f);
    ca_place(s, 1, {1, 1});
    int id = 2;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            if (!(r == 1 && c == 1) && !(r == 0 && c == 0)) ca_place(s, id++, {r, c});
    const auto d = ca_transition_probs(s, f, 0, 2.0);
    const double w_self = std::pow(1.0 + f.value(1, 1), 2.0);
    const double w_exit = std::pow(1.0 + f.value(0, 0), 2.0);
    EXPECT_NEAR(d[4].p, w_self / (w_self + w_exit), 1e-15);
    EXPECT_NEAR(d[0].p, w_exit / (w_self + w_exit), 1e-15);
    for (int k : {1, 2, 3, 5, 6, 7, 8}) EXPECT_EQ(d[k].p, 0.0);
}

TEST(CaProbs, PaperStyleNumbers) {
    // F = 0.5 at the agent and 1.0 at the only free neighbour -> {0.36, 0.64}.
    // Built on a 1x3 strip: exit at one end, agent in the middle, far end walled.
    std::vector<std::uint8_t> wall{0, 0, 0};
    const FloorField f = FloorField::from_mask(1.0, {0.0, 0.0}, 1, 3, wall, std::vector<GridIndex>{{0, 0}});
    ASSERT_DOUBLE_EQ(f.value(0, 1), 0.5);
    CaState s = ca_empty_state(f);
    ca_place(s, 1, {0, 1});
    ca_place(s, 2, {0, 2});
    const auto d = ca_transition_probs(s, f, 0, 2.0);
    EXPECT_NEAR(d[4].p, 0.36, 1e-15);
    EXPECT_NEAR(d[3].p, 0.64, 1e-15);
}

TEST(CaProbs, ZeroSensitivityIsUniformOverFreeCells) {
    const FloorField f = small_field();
    CaState s = ca_empty_state(f);
    ca_place(s, 1, {1, 1});
    ca_place(s, 2, {2, 2});
    const auto d = ca_transition_probs(s, f, 0, 0.0);
    double sum = 0.0;
    for (const auto& c : d) sum += c.p;
    EXPECT_NEAR(sum, 1.0, 1e-15);
    EXPECT_EQ(d[8].p, 0.0);  // occupied
    for (int k : {0, 1, 2, 3, 4, 5, 6, 7}) EXPECT_NEAR(d[k].p, 1.0 / 8.0, 1e-15);
}

TEST(CaProbs, OutsideGridAndOccupiedAreZero) {
    const FloorField f = small_field();
    CaState s = ca_empty_state(f);
    ca_place(s, 1, {0, 0});
    ca_place(s, 2, {1, 1});
    const auto d = ca_transition_probs(s, f, 0, 1.0);
    for (int k : {0, 1, 2, 3, 6}) EXPECT_EQ(d[k].p, 0.0);  // off-grid
    EXPECT_EQ(d[8].p, 0.0);                               // occupied by agent 2
    EXPECT_GT(d[4].p, 0.0);
}

TEST(CaProbs, FullyBlockedWithoutStayStays) {
    const FloorField f = small_field();
    CaState s = ca_empty_state(f);
    int id = 1;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) ca_place(s, id++, {r, c});
    const std::size_t centre = 4;
    const auto d = ca_transition_probs(s, f, centre, 3.0, false);
    EXPECT_EQ(d[4].p, 1.0);
}

TEST(CaProbs, LargeSensitivitySharpens) {
    const FloorField f = small_field();
    CaState s = ca_empty_state(f);
    ca_place(s, 1, {1, 1});
    double prev_ratio = 0.0;
    for (double S : {0.0, 1.0, 2.0, 5.0, 10.0, 50.0}) {
        const auto d = ca_transition_probs(s, f, 0, S);
        const double ratio = d[0].p / d[8].p;  // best vs worst
        EXPECT_GE(ratio, prev_ratio);
        prev_ratio = ratio;
    }
}

TEST(CaResolve, HighestProbabilityWins) {
    Rng rng = make_rng(1);
    const std::vector<CaClaim> claims{{0, {5, 5}, 0.7}, {1, {5, 5}, 0.4}, {2, {3, 3}, 0.2}};
    const auto m = ca_resolve_claims(claims, 10, rng);
    EXPECT_TRUE(m[0]);
    EXPECT_FALSE(m[1]);
    EXPECT_TRUE(m[2]);
}

TEST(CaResolve, TiesAreSeededAndFair) {
    int first = 0;
    for (std::uint64_t seed = 0; seed < 2000; ++seed) {
        Rng rng = make_rng(seed);
        const std::vector<CaClaim> claims{{0, {1, 1}, 0.5}, {1, {1, 1}, 0.5}};
        const auto m = ca_resolve_claims(claims, 4, rng);
        EXPECT_NE(m[0], m[1]);
        first += m[0];
        Rng again = make_rng(seed);
        EXPECT_EQ(ca_resolve_claims(claims, 4, again), m);
    }
    EXPECT_NEAR(first / 2000.0, 0.5, 0.05);
}

TEST(CaInit, PlacesDistinctRoomCells) {
    const CaWorld w = world();
    EXPECT_EQ(w.layout.exit_col_count, 4);
    const CaState s = ca_init(w, 9);
    ASSERT_EQ(s.agents.size(), 70u);
    std::set<std::pair<int, int>> cells;
    for (const auto& a : s.agents) {
        EXPECT_GE(a.cell.row, w.layout.room_row_begin());
        cells.insert({a.cell.row, a.cell.col});
    }
    EXPECT_EQ(cells.size(), 70u);
    EXPECT_EQ(ca_init(w, 9).agents, s.agents);
}

TEST(CaInit, InsufficientCells) {
    ScenarioSpec s;
    s.room_width = 2.0;
    s.room_height = 2.0;
    s.bottleneck_width = 0.8;
    s.pedestrian_count = 26;
    const CaWorld w = make_ca_world(s);
    try {
        ca_init(w, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::insufficient_cells);
    }
}

TEST(CaStep, EmptyStateOnlyAdvancesTime) {
    const CaWorld w = world();
    CaState s = ca_empty_state(w.field);
    Rng rng = make_rng(1);
    ca_step(s, w, CaParams{2.0, 0.25}, rng);
    EXPECT_DOUBLE_EQ(s.sim_time, 0.25);
    EXPECT_TRUE(s.agents.empty());
}

TEST(CaStep, ExclusionAndConservation) {
    const CaWorld w = world(1.2);
    CaState s = ca_init(w, 4);
    Rng rng = make_rng(44);
    std::size_t exits_seen = 0;
    for (int step = 0; step < 300; ++step) {
        const std::size_t before = s.agents.size();
        ca_step(s, w, CaParams{6.0, 0.3}, rng);
        std::set<std::pair<int, int>> cells;
        for (const auto& a : s.agents) {
            EXPECT_FALSE(w.field.is_wall(a.cell.row, a.cell.col));
            EXPECT_TRUE(cells.insert({a.cell.row, a.cell.col}).second);
        }
        EXPECT_LE(s.agents.size(), before);
        EXPECT_GE(s.exit_log.size(), exits_seen);
        exits_seen = s.exit_log.size();
        // Only agents that already exited may disappear.
        EXPECT_GE(s.exit_log.size(), 70 - s.agents.size());
    }
    EXPECT_GT(exits_seen, 0u);
}

TEST(CaRun, MaximumSpeedFollowsDeltaT) {
    const CaWorld w = world(2.0, 20);
    const TrajectoryLog log = ca_run(w, CaParams{3.0, 0.5}, 2);
    std::map<int, TrajectorySample> last;
    double max_step = 0.0;
    for (const auto& s : log.samples) {
        auto it = last.find(s.id);
        if (it != last.end()) max_step = std::max(max_step, std::hypot(s.x - it->second.x, s.y - it->second.y));
        last[s.id] = s;
    }
    EXPECT_LE(max_step / 0.5, 0.4 * std::sqrt(2.0) / 0.5 + 1e-9);
    EXPECT_NEAR(max_step / 0.5, 1.131, 1e-3);
}

TEST(CaRun, DeterministicAndMonotoneAtLargeS) {
    // Small room so neighbouring F values differ enough for argmax dominance.
    ScenarioSpec spec;
    spec.room_width = 2.0;
    spec.room_height = 2.0;
    spec.bottleneck_width = 0.8;
    spec.pedestrian_count = 1;
    const CaWorld w = make_ca_world(spec);
    const TrajectoryLog a = ca_run(w, CaParams{50.0, 0.3}, 8);
    EXPECT_EQ(ca_run(w, CaParams{50.0, 0.3}, 8), a);
    ASSERT_TRUE(a.complete);
    double prev = -1.0;
    for (const auto& s : a.samples) {
        const auto cell = w.field.cell_of({s.x, s.y});
        ASSERT_TRUE(cell.has_value());
        const double f = w.field.value(cell->row, cell->col);
        EXPECT_GE(f, prev - 1e-12);
        prev = f;
    }
}

TEST(CaRun, ExitTimesAreStepMultiples) {
    const CaWorld w = world(1.6, 30);
    const TrajectoryLog log = ca_run(w, CaParams{8.0, 0.2}, 5);
    ASSERT_FALSE(log.exit_times.empty());
    for (double t : log.exit_times) EXPECT_NEAR(t / 0.2, std::round(t / 0.2), 1e-9);
    EXPECT_TRUE(std::is_sorted(log.exit_times.begin(), log.exit_times.end()));
}
