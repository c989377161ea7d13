#pragma once

#include "pfvi/bounds.hpp"
#include "pfvi/cavi.hpp"
#include "pfvi/uqf.hpp"

#include <json.hpp>

#include <string>

namespace pfvi {

using Json = nlohmann::json;

Json to_json(const Matrix& m);
Json to_json(const Vector& v);

/// Partition, iterations, ELBO trace, per-block means and marginal variances, q(phi).
Json fit_report(const Problem& problem, const FitResult& result);
Json phi_report(const Problem& problem, const PhiParams& phi);
Json bounds_json(const BoundsReport& report);
Json uqf_json(const UqfEstimate& est);

/// Hex FNV-1a hash of a canonical JSON dump.
std::string config_hash(const Json& config);

}  // namespace pfvi
