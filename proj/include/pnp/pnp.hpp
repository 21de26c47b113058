#pragma once

#include "pnp/blur.hpp"
#include "pnp/config.hpp"
#include "pnp/cube.hpp"
#include "pnp/error.hpp"
#include "pnp/gmm_denoiser.hpp"
#include "pnp/gmm_prior.hpp"
#include "pnp/image_model.hpp"
#include "pnp/metrics.hpp"
#include "pnp/sharpening.hpp"
#include "pnp/simulate_io.hpp"
