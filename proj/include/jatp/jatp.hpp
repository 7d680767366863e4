#pragma once

// Umbrella header for the full toolkit.

#include "jatp/attacks.hpp"
#include "jatp/autograd.hpp"
#include "jatp/checkpoint.hpp"
#include "jatp/config.hpp"
#include "jatp/datahub.hpp"
#include "jatp/errors.hpp"
#include "jatp/evaluation.hpp"
#include "jatp/losses.hpp"
#include "jatp/models.hpp"
#include "jatp/nn.hpp"
#include "jatp/rng.hpp"
#include "jatp/tensor.hpp"
#include "jatp/training.hpp"
