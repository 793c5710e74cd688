#pragma once

#include "neuroloc/attention.hpp"
#include "neuroloc/autodiff.hpp"
#include "neuroloc/checkpoint.hpp"
#include "neuroloc/config.hpp"
#include "neuroloc/data.hpp"
#include "neuroloc/errors.hpp"
#include "neuroloc/geometry.hpp"
#include "neuroloc/hebbian.hpp"
#include "neuroloc/matrix.hpp"
#include "neuroloc/model.hpp"
#include "neuroloc/optim.hpp"
#include "neuroloc/train.hpp"
