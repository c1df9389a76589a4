#pragma once

#include "oneshot_dpd/numerics.hpp"
#include "oneshot_dpd/model.hpp"
#include "oneshot_dpd/objectives.hpp"
#include "oneshot_dpd/estimation.hpp"
#include "oneshot_dpd/inference.hpp"
#include "oneshot_dpd/robustness.hpp"
#include "oneshot_dpd/montecarlo.hpp"
#include "oneshot_dpd/io.hpp"
