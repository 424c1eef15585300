#pragma once

#include "dmkrr/common.hpp"
#include "dmkrr/experiment.hpp"
#include "dmkrr/io.hpp"
#include "dmkrr/kernels.hpp"
#include "dmkrr/krr.hpp"
#include "dmkrr/metrics.hpp"
#include "dmkrr/reduction.hpp"
#include "dmkrr/systems.hpp"
#include "dmkrr/validation.hpp"
