#pragma once

#include "ctcdrive/gradcore/grad_check.hpp"
#include "ctcdrive/gradcore/ops.hpp"
#include "ctcdrive/gradcore/tape.hpp"
#include "ctcdrive/gradcore/tensor.hpp"
