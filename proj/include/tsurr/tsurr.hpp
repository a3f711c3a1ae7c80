// SPDX-License-Identifier: MIT
#pragma once

#include "tsurr/adam.hpp"
#include "tsurr/cpd.hpp"
#include "tsurr/csv.hpp"
#include "tsurr/error.hpp"
#include "tsurr/harness.hpp"
#include "tsurr/io.hpp"
#include "tsurr/metrics.hpp"
#include "tsurr/neural.hpp"
#include "tsurr/tensor_core.hpp"
#include "tsurr/train.hpp"
