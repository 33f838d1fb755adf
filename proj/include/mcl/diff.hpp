#pragma once

#include "mcl/diff/grad_check.hpp"
#include "mcl/diff/ops.hpp"
#include "mcl/diff/sgd.hpp"
#include "mcl/diff/tape.hpp"
#include "mcl/diff/tensor.hpp"
