#pragma once

#include "ctcdrive/ctclib/ctc.hpp"
