#pragma once

#include "disiv/adam.hpp"
#include "disiv/autodiff.hpp"
#include "disiv/checkpoint.hpp"
#include "disiv/config.hpp"
#include "disiv/datagen.hpp"
#include "disiv/errors.hpp"
#include "disiv/experiment.hpp"
#include "disiv/gradcheck.hpp"
#include "disiv/graph.hpp"
#include "disiv/io.hpp"
#include "disiv/metrics.hpp"
#include "disiv/model.hpp"
#include "disiv/nn.hpp"
#include "disiv/rng.hpp"
#include "disiv/tensor.hpp"
#include "disiv/train.hpp"
