#pragma once

// Umbrella header: sensitivity estimation, exact leave-one-out oracles,
// stability-based generalization bounds, and SGD coupling probes.

#include "elastab/common.hpp"
#include "elastab/data.hpp"
#include "elastab/influence.hpp"
#include "elastab/kernel.hpp"
#include "elastab/loss.hpp"
#include "elastab/model.hpp"
#include "elastab/report.hpp"
#include "elastab/sgdprobe.hpp"
#include "elastab/stability.hpp"
#include "elastab/train.hpp"
