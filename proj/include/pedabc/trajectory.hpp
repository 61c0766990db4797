#pragma once

#include "pedabc/geometry.hpp"

#include <functional>
#include <span>
#include <vector>

namespace pedabc {

struct TrajectorySample {
    int id = 0;
    double t = 0.0;
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const TrajectorySample&, const TrajectorySample&) = default;
};

/// Positions and exit events of one run or one ingested experiment.
///
/// Samples are ordered by time, then by agent id. Exit times are ascending.
/// `bottleneck_center` anchors the speed-field measurement grid; y grows
/// into the room.
struct TrajectoryLog {
    std::vector<TrajectorySample> samples;
    std::vector<double> exit_times;
    std::vector<int> exit_ids;
    double sample_interval = 0.0;
    bool complete = false;
    Vec2 bottleneck_center{2.0, 0.0};

    friend bool operator==(const TrajectoryLog&, const TrajectoryLog&) = default;
};

/// Early-termination hook: called after every step with the current time and
/// the exit times so far; returning true ends the run.
using StopPredicate = std::function<bool(double t, std::span<const double> exit_times)>;

struct RunOptions {
    bool record_samples = true;
    StopPredicate stop;
};

} // namespace pedabc
