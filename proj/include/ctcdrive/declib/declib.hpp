#pragma once

#include "ctcdrive/declib/beam.hpp"
#include "ctcdrive/declib/greedy.hpp"
#include "ctcdrive/declib/prefix_score.hpp"
