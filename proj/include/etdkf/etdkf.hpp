#pragma once

// Event-triggered diffusion Kalman filtering for joint localization and
// clock synchronization: filter core, network simulator, covariance bounds,
// and trade-off sweeps.  Everything is header-only; include this one file.

#include "etdkf/analysis.hpp"
#include "etdkf/diagnostics.hpp"
#include "etdkf/errors.hpp"
#include "etdkf/filter.hpp"
#include "etdkf/linalg.hpp"
#include "etdkf/measurement.hpp"
#include "etdkf/parallel.hpp"
#include "etdkf/rng.hpp"
#include "etdkf/runlog.hpp"
#include "etdkf/scenario.hpp"
#include "etdkf/simulator.hpp"
#include "etdkf/state.hpp"
#include "etdkf/sweep.hpp"
#include "etdkf/topology.hpp"
#include "etdkf/trajectory.hpp"
#include "etdkf/version.hpp"
