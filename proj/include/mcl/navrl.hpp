#pragma once

#include "mcl/rl/env.hpp"
#include "mcl/rl/meta.hpp"
#include "mcl/rl/policy.hpp"
#include "mcl/rl/reinforce.hpp"
