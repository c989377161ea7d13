#include "pfvi/simulate.hpp"

#include "pfvi/error.hpp"
#include "pfvi/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace pfvi {

namespace {

struct UnionFind {
    std::vector<Index> parent;
    explicit UnionFind(Index n) : parent(static_cast<std::size_t>(n)) {
        std::iota(parent.begin(), parent.end(), Index{0});
    }
    Index find(Index x) {
        while (parent[static_cast<std::size_t>(x)] != x) {
            auto& p = parent[static_cast<std::size_t>(x)];
            p = parent[static_cast<std::size_t>(p)];
            x = p;
        }
        return x;
    }
    void unite(Index a, Index b) { parent[static_cast<std::size_t>(find(a))] = find(b); }
};

std::uint64_t cell_key(Index a, Index b, Index g2) {
    return static_cast<std::uint64_t>(a) * static_cast<std::uint64_t>(g2) + static_cast<std::uint64_t>(b);
}

}  // namespace

bool design_connected(const CrossedDesign& design) {
    if (design.g1 <= 0 || design.g2 <= 0) return false;
    std::vector<char> seen1(static_cast<std::size_t>(design.g1), 0), seen2(static_cast<std::size_t>(design.g2), 0);
    UnionFind uf(design.g1 + design.g2);
    for (const auto& [a, b] : design.cells) {
        seen1[static_cast<std::size_t>(a)] = 1;
        seen2[static_cast<std::size_t>(b)] = 1;
        uf.unite(a, design.g1 + b);
    }
    if (std::find(seen1.begin(), seen1.end(), 0) != seen1.end()) return false;
    if (std::find(seen2.begin(), seen2.end(), 0) != seen2.end()) return false;
    const Index root = uf.find(0);
    for (Index v = 1; v < design.g1 + design.g2; ++v)
        if (uf.find(v) != root) return false;
    return true;
}

CrossedDesign gen_crossed_mcar(Index g1, Index g2, double missing_prob, std::uint64_t seed) {
    if (g1 < 2 || g2 < 2) fail(ErrorKind::Domain, "MCAR design needs at least 2 levels per factor");
    if (!(missing_prob >= 0.0 && missing_prob < 1.0))
        fail(ErrorKind::Domain, "missing probability must lie in [0, 1)");
    CrossedDesign d;
    d.g1 = g1;
    d.g2 = g2;
    d.generator = "mcar";
    d.method = "bernoulli cells, regenerate until connected";
    d.seed = seed;
    d.missing_prob = missing_prob;
    Rng rng(seed);
    std::bernoulli_distribution keep(1.0 - missing_prob);
    for (int attempt = 1; attempt <= 100; ++attempt) {
        d.cells.clear();
        for (Index a = 0; a < g1; ++a)
            for (Index b = 0; b < g2; ++b)
                if (missing_prob == 0.0 || keep(rng)) d.cells.emplace_back(a, b);
        d.attempts = attempt;
        if (design_connected(d)) return d;
    }
    fail(ErrorKind::Domain, "could not generate a connected MCAR design in 100 attempts");
}

CrossedDesign gen_biregular(Index n, Index d1, Index d2, std::uint64_t seed) {
    if (d1 < 1 || d2 < 1 || n % d1 != 0 || n % d2 != 0)
        fail(ErrorKind::Domain, "biregular design needs d1 | n and d2 | n");
    if (d1 < 3 || d2 < 3) fail(ErrorKind::Domain, "biregular design needs d1, d2 >= 3");
    CrossedDesign d;
    d.g1 = n / d1;
    d.g2 = n / d2;
    d.d1 = d1;
    d.d2 = d2;
    d.generator = "biregular";
    d.seed = seed;
    if (d1 > d.g2 || d2 > d.g1)
        fail(ErrorKind::Domain, "no simple biregular design exists for these degrees");
    Rng rng(seed);

    // Configuration model: pair factor-1 stubs with a random permutation of factor-2 stubs.
    std::vector<Index> stubs2(static_cast<std::size_t>(n));
    for (Index e = 0; e < n; ++e) stubs2[static_cast<std::size_t>(e)] = e / d2;
    std::unordered_set<std::uint64_t> used;
    for (int attempt = 1; attempt <= 1000; ++attempt) {
        std::shuffle(stubs2.begin(), stubs2.end(), rng);
        used.clear();
        bool simple = true;
        for (Index e = 0; e < n && simple; ++e)
            simple = used.insert(cell_key(e / d1, stubs2[static_cast<std::size_t>(e)], d.g2)).second;
        d.attempts = attempt;
        if (simple) {
            for (Index e = 0; e < n; ++e) d.cells.emplace_back(e / d1, stubs2[static_cast<std::size_t>(e)]);
            d.method = "configuration model";
            return d;
        }
    }

    // Degree-preserving double-edge swaps from a simple deterministic start.
    std::vector<std::pair<Index, Index>> edges(static_cast<std::size_t>(n));
    used.clear();
    for (Index e = 0; e < n; ++e) {
        edges[static_cast<std::size_t>(e)] = {e / d1, e % d.g2};
        used.insert(cell_key(e / d1, e % d.g2, d.g2));
    }
    std::uniform_int_distribution<Index> pick(0, n - 1);
    const Index swaps = 20 * n;
    for (Index s = 0; s < swaps; ++s) {
        auto& e1 = edges[static_cast<std::size_t>(pick(rng))];
        auto& e2 = edges[static_cast<std::size_t>(pick(rng))];
        if (e1.first == e2.first || e1.second == e2.second) continue;
        const auto k1 = cell_key(e1.first, e2.second, d.g2);
        const auto k2 = cell_key(e2.first, e1.second, d.g2);
        if (used.count(k1) || used.count(k2)) continue;
        used.erase(cell_key(e1.first, e1.second, d.g2));
        used.erase(cell_key(e2.first, e2.second, d.g2));
        used.insert(k1);
        used.insert(k2);
        std::swap(e1.second, e2.second);
    }
    d.cells = std::move(edges);
    d.method = "switch chain";
    return d;
}

MixedModelData design_to_data(const CrossedDesign& design, const Vector& y, LikelihoodKind lik) {
    const Index n = design.n();
    if (y.size() != n) fail(ErrorKind::Precondition, "response length does not match the design");
    MixedModelData data;
    data.y = y;
    if (lik == LikelihoodKind::Binomial) data.trials = Eigen::VectorXi::Ones(n);
    data.X = Matrix::Ones(n, 1);
    data.fixed_names = {"(Intercept)"};
    const Index levels[2] = {design.g1, design.g2};
    for (int f = 0; f < 2; ++f) {
        FactorSpec fs;
        fs.name = f == 0 ? "f1" : "f2";
        fs.levels = levels[f];
        fs.effect_dim = 1;
        for (Index g = 0; g < levels[f]; ++g) fs.level_labels.push_back(std::to_string(g + 1));
        Eigen::VectorXi m(n);
        for (Index i = 0; i < n; ++i) {
            const auto& c = design.cells[static_cast<std::size_t>(i)];
            m(i) = static_cast<int>(f == 0 ? c.first : c.second);
        }
        data.factors.push_back(fs);
        data.memberships.push_back(m);
        data.slope_values.push_back(Matrix::Ones(n, 1));
    }
    return data;
}

SimulatedData simulate_responses(const CrossedDesign& design, LikelihoodKind lik, std::uint64_t seed,
                                 const SimOptions& opts) {
    Rng rng(seed);
    std::normal_distribution<double> norm(0.0, 1.0);
    // InverseGamma(1, 0.5) is 1 / Gamma(shape 1, scale 2).
    std::gamma_distribution<double> gam(1.0, 2.0);
    SimulatedData out;
    out.intercept = opts.intercept;
    out.sigma = opts.sigma;
    const double gamma_scale = lik == LikelihoodKind::Gaussian ? opts.sigma * opts.sigma : 1.0;
    const Index levels[2] = {design.g1, design.g2};
    for (int f = 0; f < 2; ++f) {
        double v = opts.factor_variances ? (*opts.factor_variances)[static_cast<std::size_t>(f)]
                                         : 1.0 / gam(rng);
        out.factor_variances.push_back(v);
        Vector a(levels[f]);
        for (Index g = 0; g < levels[f]; ++g) a(g) = std::sqrt(gamma_scale * v) * norm(rng);
        out.effects.push_back(a);
    }
    const Index n = design.n();
    Vector y(n);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (Index i = 0; i < n; ++i) {
        const auto& c = design.cells[static_cast<std::size_t>(i)];
        const double eta = opts.intercept + out.effects[0](c.first) + out.effects[1](c.second);
        if (lik == LikelihoodKind::Gaussian) {
            y(i) = eta + opts.sigma * norm(rng);
        } else {
            const double p = 1.0 / (1.0 + std::exp(-eta));
            y(i) = unif(rng) < p ? 1.0 : 0.0;
        }
    }
    out.data = design_to_data(design, y, lik);
    return out;
}

}  // namespace pfvi
