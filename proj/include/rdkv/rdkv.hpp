#pragma once

#include "rdkv/allocator.hpp"
#include "rdkv/distortion.hpp"
#include "rdkv/error.hpp"
#include "rdkv/evaluator.hpp"
#include "rdkv/io.hpp"
#include "rdkv/quantizers.hpp"
#include "rdkv/rng.hpp"
#include "rdkv/sensitivity.hpp"
