#pragma once

#include "odefilter/belief.hpp"
#include "odefilter/calibration.hpp"
#include "odefilter/diagnostics.hpp"
#include "odefilter/errors.hpp"
#include "odefilter/gaussian_filter.hpp"
#include "odefilter/linalg.hpp"
#include "odefilter/particle_filter.hpp"
#include "odefilter/prior.hpp"
#include "odefilter/problems.hpp"
#include "odefilter/sigma_points.hpp"
