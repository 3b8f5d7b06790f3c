#pragma once

#include "locprod/csv.hpp"
#include "locprod/decomposition.hpp"
#include "locprod/error.hpp"
#include "locprod/estimator.hpp"
#include "locprod/inference.hpp"
#include "locprod/io.hpp"
#include "locprod/kernel.hpp"
#include "locprod/panel.hpp"
#include "locprod/rng.hpp"
#include "locprod/simulator.hpp"
#include "locprod/solver.hpp"
#include "locprod/stats.hpp"
#include "locprod/version.hpp"
