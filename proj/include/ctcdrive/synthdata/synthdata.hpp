#pragma once

#include "ctcdrive/synthdata/batch.hpp"
#include "ctcdrive/synthdata/corpus.hpp"
#include "ctcdrive/synthdata/io.hpp"
