#pragma once

#include "errors.hpp"
#include "rng.hpp"
#include "stats.hpp"
#include "index_set.hpp"
#include "point_process.hpp"
#include "grid.hpp"
#include "sym_matrix.hpp"
#include "inclusion_field.hpp"
#include "spectral.hpp"
#include "corrector_solver.hpp"
#include "clusters.hpp"
#include "difference_calculus.hpp"
#include "oracle1d.hpp"
#include "parallel.hpp"
#include "cluster_expansion.hpp"
#include "field_io.hpp"
#include "config.hpp"
#include "harness.hpp"
