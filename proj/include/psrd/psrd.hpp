#pragma once

// psrd: position-sensitive region detection at desk scale.
// Umbrella header; every module is usable on its own.

#include "psrd/box.hpp"
#include "psrd/checkpoint.hpp"
#include "psrd/config.hpp"
#include "psrd/detector.hpp"
#include "psrd/error.hpp"
#include "psrd/eval.hpp"
#include "psrd/gradcheck.hpp"
#include "psrd/loss.hpp"
#include "psrd/net.hpp"
#include "psrd/ops.hpp"
#include "psrd/optim.hpp"
#include "psrd/ppm.hpp"
#include "psrd/proposals.hpp"
#include "psrd/ps_roi_pool.hpp"
#include "psrd/rng.hpp"
#include "psrd/synth.hpp"
#include "psrd/tensor.hpp"
#include "psrd/text.hpp"
#include "psrd/trainer.hpp"
