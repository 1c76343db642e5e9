#pragma once

#include "ctcdrive/seqmodel/checkpoint.hpp"
#include "ctcdrive/seqmodel/config.hpp"
#include "ctcdrive/seqmodel/model.hpp"
#include "ctcdrive/seqmodel/params.hpp"
