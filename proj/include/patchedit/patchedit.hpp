#pragma once

// Umbrella header for the library. The CLI surface lives in cli.hpp and is
// kept separate so library consumers do not pull in the argument parser.

#include "assets.hpp"
#include "denoiser.hpp"
#include "errors.hpp"
#include "inversion.hpp"
#include "io.hpp"
#include "metrics.hpp"
#include "patchgrid.hpp"
#include "pipeline.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "sync.hpp"
#include "tensor.hpp"
#include "transfer.hpp"
