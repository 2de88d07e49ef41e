// Umbrella header.
#pragma once

#include "bench.hpp"
#include "bounds.hpp"
#include "canon.hpp"
#include "commands.hpp"
#include "io.hpp"
#include "linlsq.hpp"
#include "models/simulate.hpp"
#include "optimize.hpp"
#include "parallel.hpp"
#include "presets.hpp"
#include "stage1.hpp"
#include "stage2.hpp"
