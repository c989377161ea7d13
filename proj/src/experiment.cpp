#include "pfvi/experiment.hpp"

#include "pfvi/cavi.hpp"
#include "pfvi/error.hpp"
#include "pfvi/gibbs.hpp"
#include "pfvi/rng.hpp"
#include "pfvi/simulate.hpp"
#include "pfvi/uqf.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace pfvi {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
const char* kFamilies[3] = {"ff", "pf", "uf"};

struct CellResult {
    bool ok = false;
    std::string error;
    double n = 0;
    Index p = 0;
    double uqf_fixed[3] = {kNaN, kNaN, kNaN};
    double uqf_split[3] = {kNaN, kNaN, kNaN};
    double time_per_iter[3] = {kNaN, kNaN, kNaN};
    double iterations[3] = {0, 0, 0};
    bool converged[3] = {false, false, false};
};

PriorSpec simulation_prior() {
    // InverseGamma(1, 0.5) on each variance is IW(2, 1) for D = 1.
    PriorSpec p;
    for (int f = 0; f < 2; ++f) {
        p.iw_df.push_back(2.0);
        p.iw_scale.push_back(Matrix::Identity(1, 1));
    }
    return p;
}

CellResult run_cell(const SimConfig& cfg, Index g, int rep) {
    CellResult out;
    try {
        const auto ug = static_cast<std::uint64_t>(g);
        const auto ur = static_cast<std::uint64_t>(rep);
        CrossedDesign design = gen_crossed_mcar(g, g, cfg.missing_prob, derive_seed(cfg.seed, {ug, ur, 1}));
        SimulatedData sim = simulate_responses(design, cfg.lik, derive_seed(cfg.seed, {ug, ur, 2}));
        Problem problem = Problem::make(sim.data, cfg.lik, simulation_prior());
        out.n = static_cast<double>(problem.n());
        out.p = problem.num_params();

        std::optional<GibbsDraws> draws;
        if (cfg.lik == LikelihoodKind::Gaussian && cfg.gibbs_draws > 0 && out.p <= cfg.split_max_params) {
            GibbsOptions go;
            go.iters = cfg.gibbs_draws;
            go.burn_in = cfg.gibbs_burn_in;
            go.seed = derive_seed(cfg.seed, {ug, ur, 3});
            go.guard = cfg.guard;
            draws = gibbs_gaussian(problem, go);
        }

        const Partition parts[3] = {Partition::ff(2), Partition::pf_fixed(2), Partition::uf(2)};
        for (int f = 0; f < 3; ++f) {
            FitOptions fo;
            fo.tol = cfg.tol;
            fo.max_iter = cfg.max_iter;
            FitResult fr = fit(problem, parts[f], fo);
            const double total = std::accumulate(fr.sweep_seconds.begin(), fr.sweep_seconds.end(), 0.0);
            out.time_per_iter[f] = fr.sweep_seconds.empty() ? kNaN : total / static_cast<double>(fr.sweep_seconds.size());
            out.iterations[f] = fr.iterations;
            out.converged[f] = fr.converged;
            if (out.p <= cfg.guard) {
                const Matrix qprec = export_q_precision(problem, fr.state, cfg.guard);
                const ExactMoments ex = exact_target_moments(*fr.state.surrogate, parts[f], cfg.guard);
                out.uqf_fixed[f] = uqf_analytic(ex.cov, qprec);
                if (draws) out.uqf_split[f] = uqf_split_sample(draws->theta, qprec).value;
            }
        }
        out.ok = true;
    } catch (const std::exception& e) {
        out.error = "G=" + std::to_string(g) + " replicate " + std::to_string(rep) + ": " + e.what();
    }
    return out;
}

double nan_mean(const std::vector<double>& v) {
    double s = 0.0;
    int c = 0;
    for (double x : v)
        if (!std::isnan(x)) {
            s += x;
            ++c;
        }
    return c ? s / c : kNaN;
}

}  // namespace

SimConfig SimConfig::full_scale(LikelihoodKind lik) {
    SimConfig c;
    c.lik = lik;
    c.g_grid = {32, 64, 128, 256, 512, 1024};
    c.replicates = 100;
    c.guard = 2100;
    return c;
}

void SimConfig::validate() const {
    if (g_grid.empty()) fail(ErrorKind::Domain, "experiment grid is empty");
    for (Index g : g_grid)
        if (g < 2) fail(ErrorKind::Domain, "grid values must be at least 2");
    if (!(missing_prob >= 0.0 && missing_prob < 1.0)) fail(ErrorKind::Domain, "missing_prob must lie in [0, 1)");
    if (replicates < 1) fail(ErrorKind::Domain, "replicates must be positive");
    if (jobs < 1) fail(ErrorKind::Domain, "jobs must be positive");
}

GridResult run_grid(const SimConfig& config) {
    config.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t ng = config.g_grid.size();
    const auto nr = static_cast<std::size_t>(config.replicates);
    std::vector<CellResult> cells(ng * nr);
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (std::size_t idx = next++; idx < cells.size(); idx = next++)
            cells[idx] = run_cell(config, config.g_grid[idx / nr], static_cast<int>(idx % nr));
    };
    const int jobs = std::min<int>(config.jobs, static_cast<int>(cells.size()));
    std::vector<std::thread> threads;
    for (int j = 1; j < jobs; ++j) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();

    GridResult res;
    for (std::size_t gi = 0; gi < ng; ++gi) {
        for (int f = 0; f < 3; ++f) {
            GridRow row;
            row.g = config.g_grid[gi];
            row.family = kFamilies[f];
            row.partition = f == 0 ? "C={}" : (f == 1 ? "C={0}" : "C={0,1,2}");
            std::vector<double> uf, us, tp, it, nn;
            int conv = 0;
            for (std::size_t r = 0; r < nr; ++r) {
                const CellResult& c = cells[gi * nr + r];
                if (!c.ok) {
                    ++row.failures;
                    continue;
                }
                ++row.replicates;
                row.num_params = c.p;
                nn.push_back(c.n);
                uf.push_back(c.uqf_fixed[f]);
                us.push_back(c.uqf_split[f]);
                tp.push_back(c.time_per_iter[f]);
                it.push_back(c.iterations[f]);
                conv += c.converged[f] ? 1 : 0;
            }
            row.mean_n = nan_mean(nn);
            row.uqf_fixed_phi = nan_mean(uf);
            row.uqf_split = nan_mean(us);
            row.time_per_iter = nan_mean(tp);
            row.iterations = nan_mean(it);
            row.converged_fraction = row.replicates ? static_cast<double>(conv) / row.replicates : 0.0;
            res.rows.push_back(row);
        }
        for (std::size_t r = 0; r < nr; ++r)
            if (!cells[gi * nr + r].ok) res.failures.push_back(cells[gi * nr + r].error);
    }
    res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

std::string grid_csv(const GridResult& result) {
    std::ostringstream os;
    os << std::setprecision(10);
    os << "G,family,partition,num_params,mean_n,replicates,failures,uqf_fixed_phi,uqf_split,"
          "time_per_iter,iterations,converged_fraction\n";
    auto num = [&](double v) {
        if (std::isnan(v)) os << "NA";
        else os << v;
    };
    for (const auto& r : result.rows) {
        os << r.g << ',' << r.family << ",\"" << r.partition << "\"," << r.num_params << ',';
        num(r.mean_n);
        os << ',' << r.replicates << ',' << r.failures << ',';
        num(r.uqf_fixed_phi);
        os << ',';
        num(r.uqf_split);
        os << ',';
        num(r.time_per_iter);
        os << ',';
        num(r.iterations);
        os << ',' << r.converged_fraction << '\n';
    }
    return os.str();
}

}  // namespace pfvi
