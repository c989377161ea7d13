#pragma once

#include "pfvi/surrogate.hpp"

#include <string>
#include <utility>
#include <vector>

namespace pfvi {

/// Factor `inner` is nested in `outer` (0-based factor indices): every observed
/// level of `inner` co-occurs with exactly one level of `outer`.
bool factor_nested_in(const MixedModelData& data, Index inner, Index outer);

/// Resolves "ff", "uf", "pf:fixed", "pf:auto" or a comma-separated list of
/// collapsed blocks ("fixed" or 0 for the fixed effects, factor names or block numbers).
Partition resolve_partition(const std::string& spec, const MixedModelData& data);

}  // namespace pfvi
