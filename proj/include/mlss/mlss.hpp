#pragma once

#include "mlss/common.hpp"
#include "mlss/data.hpp"
#include "mlss/dgp.hpp"
#include "mlss/estimator.hpp"
#include "mlss/features.hpp"
#include "mlss/instrument_matrix.hpp"
#include "mlss/instruments.hpp"
#include "mlss/learners.hpp"
#include "mlss/linalg.hpp"
#include "mlss/montecarlo.hpp"
#include "mlss/parallel.hpp"
#include "mlss/report.hpp"
#include "mlss/stats.hpp"
#include "mlss/tree.hpp"
#include "mlss/weak_iv.hpp"
