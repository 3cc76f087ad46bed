#pragma once

#include "mvroll/core.hpp"
#include "mvroll/featurize.hpp"
#include "mvroll/transform.hpp"
#include "mvroll/backends/backend.hpp"
#include "mvroll/backends/seasonal_naive.hpp"
#include "mvroll/backends/knn.hpp"
#include "mvroll/backends/ridge.hpp"
#include "mvroll/backends/icm_gp.hpp"
#include "mvroll/backends/external.hpp"
#include "mvroll/backends/factory.hpp"
#include "mvroll/rollout.hpp"
#include "mvroll/metrics.hpp"
#include "mvroll/data.hpp"
#include "mvroll/bench.hpp"
