#pragma once

#include "mcl/tasks/encoders.hpp"
#include "mcl/tasks/episode.hpp"
#include "mcl/tasks/pool.hpp"
#include "mcl/tasks/pool_io.hpp"
#include "mcl/tasks/shapes.hpp"
#include "mcl/tasks/sinusoid.hpp"
