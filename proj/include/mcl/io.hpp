#pragma once

#include "mcl/io/checkpoint.hpp"
#include "mcl/io/config.hpp"
#include "mcl/io/manifest.hpp"
