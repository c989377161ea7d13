#include "pfvi/partition.hpp"

#include "pfvi/error.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

namespace pfvi {

bool factor_nested_in(const MixedModelData& data, Index inner, Index outer) {
    if (inner == outer) return false;
    const auto& mi = data.memberships[static_cast<std::size_t>(inner)];
    const auto& mo = data.memberships[static_cast<std::size_t>(outer)];
    std::vector<int> partner(static_cast<std::size_t>(data.factors[static_cast<std::size_t>(inner)].levels), -1);
    for (Index i = 0; i < data.n(); ++i) {
        int& p = partner[static_cast<std::size_t>(mi(i))];
        if (p < 0) p = mo(i);
        else if (p != mo(i)) return false;
    }
    return data.n() > 0;
}

Partition resolve_partition(const std::string& spec, const MixedModelData& data) {
    const Index K = data.num_factors();
    if (spec == "ff") return Partition::ff(K);
    if (spec == "uf") return Partition::uf(K);
    if (spec == "pf:fixed" || spec == "pf") return Partition::pf_fixed(K);
    if (spec == "pf:auto") {
        std::vector<Index> c{0};
        for (Index k = 0; k < K; ++k)
            for (Index other = 0; other < K; ++other)
                if (factor_nested_in(data, other, k)) {
                    c.push_back(k + 1);
                    break;
                }
        return Partition::from_collapsed(c, K);
    }
    std::vector<Index> c;
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok.erase(0, tok.find_first_not_of(" \t"));
        tok.erase(tok.find_last_not_of(" \t") + 1);
        if (tok.empty()) fail(ErrorKind::Schema, "empty entry in partition list '" + spec + "'");
        if (tok == "fixed") {
            c.push_back(0);
            continue;
        }
        auto it = std::find_if(data.factors.begin(), data.factors.end(),
                               [&](const FactorSpec& f) { return f.name == tok; });
        if (it != data.factors.end()) {
            c.push_back(static_cast<Index>(it - data.factors.begin()) + 1);
            continue;
        }
        Index v = -1;
        auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec == std::errc() && ptr == tok.data() + tok.size() && v >= 0 && v <= K) {
            c.push_back(v);
            continue;
        }
        fail(ErrorKind::Schema, "partition refers to unknown block '" + tok + "'");
    }
    return Partition::from_collapsed(c, K);
}

}  // namespace pfvi
