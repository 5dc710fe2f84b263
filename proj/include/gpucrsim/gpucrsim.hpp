#pragma once

// Umbrella header: a deterministic discrete-event simulator of a GPU
// process with a concurrent checkpoint/restore engine built on a runtime
// kernel dataflow DAG.

#include "gpucrsim/api.hpp"
#include "gpucrsim/buffer.hpp"
#include "gpucrsim/clock.hpp"
#include "gpucrsim/config.hpp"
#include "gpucrsim/cr.hpp"
#include "gpucrsim/crc32.hpp"
#include "gpucrsim/dag.hpp"
#include "gpucrsim/engines.hpp"
#include "gpucrsim/errors.hpp"
#include "gpucrsim/host_memory.hpp"
#include "gpucrsim/image.hpp"
#include "gpucrsim/process.hpp"
#include "gpucrsim/rng.hpp"
#include "gpucrsim/runner.hpp"
#include "gpucrsim/scenario.hpp"
#include "gpucrsim/speculation.hpp"
#include "gpucrsim/workload.hpp"
