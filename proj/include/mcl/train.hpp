#pragma once

#include "mcl/train/classify.hpp"
#include "mcl/train/common.hpp"
#include "mcl/train/pretrain.hpp"
#include "mcl/train/probe.hpp"
#include "mcl/train/regression.hpp"
#include "mcl/train/sweep.hpp"
