#pragma once

// Umbrella header for the isomerge library: isotropic model merging
// (Iso-C, Iso-CTS) with baseline operators, subspace alignment metrics,
// and a deterministic synthetic benchmark harness.

#include "isomerge/benchmark.hpp"
#include "isomerge/csv.hpp"
#include "isomerge/errors.hpp"
#include "isomerge/isot.hpp"
#include "isomerge/matrix.hpp"
#include "isomerge/merge.hpp"
#include "isomerge/metrics.hpp"
#include "isomerge/parallel.hpp"
#include "isomerge/rng.hpp"
#include "isomerge/spectral.hpp"
#include "isomerge/svd.hpp"
#include "isomerge/synth.hpp"
#include "isomerge/task_matrix.hpp"
#include "isomerge/tensor.hpp"
