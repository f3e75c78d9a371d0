#pragma once

#include "lrcn/tensor.hpp"
#include "lrcn/random.hpp"
#include "lrcn/cells.hpp"
#include "lrcn/features.hpp"
#include "lrcn/model.hpp"
#include "lrcn/training.hpp"
#include "lrcn/decoding.hpp"
#include "lrcn/evaluation.hpp"
#include "lrcn/data.hpp"
#include "lrcn/config.hpp"
#include "lrcn/checkpoint.hpp"
#include "lrcn/fixtures.hpp"
