#pragma once

// Umbrella header for the whole library.

#include "cosetpsd/analysis.hpp"
#include "cosetpsd/config.hpp"
#include "cosetpsd/error.hpp"
#include "cosetpsd/estimator.hpp"
#include "cosetpsd/experiments.hpp"
#include "cosetpsd/fft.hpp"
#include "cosetpsd/parallel.hpp"
#include "cosetpsd/pattern.hpp"
#include "cosetpsd/rng.hpp"
#include "cosetpsd/ruler.hpp"
#include "cosetpsd/sensing.hpp"
#include "cosetpsd/sysmat.hpp"
