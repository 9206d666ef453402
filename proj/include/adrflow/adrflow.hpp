#ifndef ADRFLOW_ADRFLOW_HPP
#define ADRFLOW_ADRFLOW_HPP

/// \file adrflow.hpp
/// Umbrella header: differentiable advection-diffusion-reaction operators on
/// 2D grids and the network built from them.

#include "adrflow/tensor.hpp"
#include "adrflow/tape.hpp"
#include "adrflow/ops.hpp"
#include "adrflow/gradcheck.hpp"
#include "adrflow/advection.hpp"
#include "adrflow/diffusion.hpp"
#include "adrflow/reaction.hpp"
#include "adrflow/model.hpp"
#include "adrflow/data.hpp"
#include "adrflow/training.hpp"
#include "adrflow/metrics.hpp"
#include "adrflow/config.hpp"
#include "adrflow/evaluate.hpp"
#include "adrflow/verify.hpp"

#endif  // ADRFLOW_ADRFLOW_HPP
