#pragma once

#include "ctcdrive/evalcli/bench.hpp"
#include "ctcdrive/evalcli/eval.hpp"
#include "ctcdrive/evalcli/run_config.hpp"
#include "ctcdrive/evalcli/runner.hpp"
#include "ctcdrive/evalcli/wer.hpp"
