// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header.
#pragma once

#include "cmc/config.hpp"
#include "cmc/critic.hpp"
#include "cmc/diagnostics.hpp"
#include "cmc/error.hpp"
#include "cmc/experiments.hpp"
#include "cmc/io.hpp"
#include "cmc/losses.hpp"
#include "cmc/memory_bank.hpp"
#include "cmc/multiview.hpp"
#include "cmc/optim.hpp"
#include "cmc/probe.hpp"
#include "cmc/rng.hpp"
#include "cmc/tensor.hpp"
#include "cmc/train.hpp"
#include "cmc/views.hpp"
