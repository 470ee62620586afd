#pragma once

// Umbrella header.

#include "stela/bench.hpp"
#include "stela/checkpoint.hpp"
#include "stela/config.hpp"
#include "stela/geometry.hpp"
#include "stela/kitti_io.hpp"
#include "stela/losses.hpp"
#include "stela/metrics.hpp"
#include "stela/mlp.hpp"
#include "stela/neighborhood.hpp"
#include "stela/pipeline.hpp"
#include "stela/point_cloud.hpp"
#include "stela/report.hpp"
#include "stela/rng.hpp"
#include "stela/sparse_grid.hpp"
#include "stela/stela_core.hpp"
#include "stela/synthetic.hpp"
