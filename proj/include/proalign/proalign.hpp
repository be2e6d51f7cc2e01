#pragma once

#include "proalign/core.hpp"
#include "proalign/metrics.hpp"
#include "proalign/pfam.hpp"
#include "proalign/pipeline.hpp"
#include "proalign/probe.hpp"
#include "proalign/proto_init.hpp"
#include "proalign/rng.hpp"
#include "proalign/synth.hpp"
#include "proalign/tensor_io.hpp"

namespace proalign {
inline constexpr const char* kVersion = "0.1.0";
}
