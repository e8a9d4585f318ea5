#pragma once

// Umbrella header for the spherical spin-glass laboratory.

#include "band_decomposition.hpp"
#include "errors.hpp"
#include "experiments.hpp"
#include "free_energy.hpp"
#include "gaussian_field.hpp"
#include "interpolation.hpp"
#include "mixture.hpp"
#include "quadrature.hpp"
#include "rng.hpp"
#include "sphere_geometry.hpp"
#include "stats.hpp"
