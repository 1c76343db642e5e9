#pragma once

#include "ctcdrive/selftrain/config.hpp"
#include "ctcdrive/selftrain/losses.hpp"
#include "ctcdrive/selftrain/optim.hpp"
#include "ctcdrive/selftrain/pseudo_labels.hpp"
#include "ctcdrive/selftrain/schedule.hpp"
#include "ctcdrive/selftrain/trainer.hpp"
