// Copyright (c) 2026 scoped-dnas contributors
// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header for the scoped-dnas library.

#pragma once

#include "scopednas/arch_json.hpp"
#include "scopednas/csv.hpp"
#include "scopednas/data.hpp"
#include "scopednas/engine.hpp"
#include "scopednas/model.hpp"
#include "scopednas/ops.hpp"
#include "scopednas/optim.hpp"
#include "scopednas/rng.hpp"
#include "scopednas/run_config.hpp"
#include "scopednas/searchspace.hpp"
#include "scopednas/svg.hpp"
#include "scopednas/tensor.hpp"
