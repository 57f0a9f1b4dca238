#pragma once

#include "trustcons/errors.hpp"
#include "trustcons/rng.hpp"
#include "trustcons/format.hpp"
#include "trustcons/topology.hpp"
#include "trustcons/trust.hpp"
#include "trustcons/protocol.hpp"
#include "trustcons/analysis.hpp"
#include "trustcons/config.hpp"
#include "trustcons/trace_io.hpp"
#include "trustcons/harness.hpp"
