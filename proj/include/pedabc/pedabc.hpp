#pragma once

#include "pedabc/abc.hpp"
#include "pedabc/calibration.hpp"
#include "pedabc/error.hpp"
#include "pedabc/geometry.hpp"
#include "pedabc/io.hpp"
#include "pedabc/observables.hpp"
#include "pedabc/rng.hpp"
#include "pedabc/scenario.hpp"
#include "pedabc/sim_ca.hpp"
#include "pedabc/sim_sf.hpp"
#include "pedabc/stats.hpp"
#include "pedabc/trajectory.hpp"
