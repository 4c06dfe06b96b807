#pragma once

// torch's c10 logging defines glog-style CHECK macros that abort the process.
// Pull torch in first, drop the colliding names, then let doctest define its own.
#include <torch/torch.h>

#undef CHECK
#undef CHECK_EQ
#undef CHECK_NE
#undef CHECK_LE
#undef CHECK_LT
#undef CHECK_GE
#undef CHECK_GT

#include <doctest.h>
