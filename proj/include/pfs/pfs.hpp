#pragma once

#include "pfs/calendar.hpp"
#include "pfs/csv.hpp"
#include "pfs/dynamics.hpp"
#include "pfs/dynasty.hpp"
#include "pfs/error.hpp"
#include "pfs/glm.hpp"
#include "pfs/oracles.hpp"
#include "pfs/panel_ingest.hpp"
#include "pfs/pfs_estimator.hpp"
#include "pfs/pipeline.hpp"
#include "pfs/random.hpp"
#include "pfs/report.hpp"
#include "pfs/special.hpp"
#include "pfs/svg.hpp"
#include "pfs/synth.hpp"
#include "pfs/threshold.hpp"
#include "pfs/weighted_stats.hpp"
