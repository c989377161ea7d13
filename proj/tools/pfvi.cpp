#include "pfvi/bounds.hpp"
#include "pfvi/cavi.hpp"
#include "pfvi/error.hpp"
#include "pfvi/experiment.hpp"
#include "pfvi/gibbs.hpp"
#include "pfvi/partition.hpp"
#include "pfvi/random_scan.hpp"
#include "pfvi/report.hpp"
#include "pfvi/rng.hpp"
#include "pfvi/simulate.hpp"
#include "pfvi/uqf.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace pfvi;

namespace {

struct Options {
    std::string command;
    std::string data, schema;
    std::string likelihood = "gaussian";
    std::string partition = "pf:fixed";
    double tol = 1e-6;
    int max_iter = 1000;
    std::uint64_t seed = 1;
    int jobs = 1;
    std::string out = ".";
    bool dry_run = false;

    // simulate
    std::string generator = "mcar";
    Index g1 = 32, g2 = 32, n = 0, d1 = 4, d2 = 4;
    double missing = 0.9;

    // uqf
    std::string draws;
    std::vector<std::string> families;
    int folds = 5;
    Index top = 50;

    // gibbs
    int iters = 20000, burn_in = 1000, thin = 1;

    // experiment
    std::vector<Index> grid;
    int replicates = 20;
    int gibbs_draws = 2000;
    bool full_scale = false;

    // rs-lab
    std::string target;
    std::vector<Index> collapsed;
    int sweeps = 20, runs = 10000, keep_runs = 100;
};

Json config_json(const Options& o) {
    Json j{{"command", o.command}, {"seed", o.seed}};
    auto add = [&](const char* key, const auto& v) { j[key] = v; };
    if (!o.data.empty()) add("data", o.data);
    if (!o.schema.empty()) add("schema", o.schema);
    add("likelihood", o.likelihood);
    if (o.command == "fit" || o.command == "uqf" || o.command == "bounds") {
        add("partition", o.partition);
        add("tol", o.tol);
        add("max_iter", o.max_iter);
    }
    if (o.command == "simulate") {
        add("generator", o.generator);
        add("g1", o.g1);
        add("g2", o.g2);
        add("missing", o.missing);
        add("n", o.n);
        add("d1", o.d1);
        add("d2", o.d2);
    }
    if (o.command == "uqf") {
        add("draws", o.draws);
        add("families", o.families);
        add("folds", o.folds);
        add("top", o.top);
    }
    if (o.command == "gibbs") {
        add("iters", o.iters);
        add("burn_in", o.burn_in);
        add("thin", o.thin);
    }
    if (o.command == "experiment") {
        add("grid", o.grid);
        add("replicates", o.replicates);
        add("missing", o.missing);
        add("gibbs_draws", o.gibbs_draws);
        add("full_scale", o.full_scale);
        add("tol", o.tol);
        add("max_iter", o.max_iter);
    }
    if (o.command == "rs-lab") {
        add("target", o.target);
        add("partition", o.partition);
        add("collapsed", o.collapsed);
        add("sweeps", o.sweeps);
        add("runs", o.runs);
    }
    return j;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(ErrorKind::Io, "cannot write " + path.string());
    f << text;
    if (!f) fail(ErrorKind::Io, "write failed for " + path.string());
}

void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

Json stamped(Json body, const Json& config) {
    body["config"] = config;
    body["config_hash"] = config_hash(config);
    return body;
}

Problem load_problem(const Options& o) {
    if (o.data.empty() || o.schema.empty()) fail(ErrorKind::Precondition, "--data and --schema are required");
    const Schema schema = Schema::from_json_file(o.schema);
    const LikelihoodKind lik = likelihood_from_string(o.likelihood);
    auto data = load_long_csv(o.data, schema, lik);
    Problem prob = Problem::make(std::move(data), lik);
    for (const auto& w : validate_model(*prob.data, prob.prior, prob.lik).warnings)
        std::cerr << Json{{"warning", {{"code", w.code}, {"message", w.message}}}}.dump() << '\n';
    return prob;
}

FitOptions fit_options(const Options& o) {
    FitOptions f;
    f.tol = o.tol;
    f.max_iter = o.max_iter;
    return f;
}

Partition family_partition(const std::string& family, const MixedModelData& data) {
    if (family == "ff" || family == "pf" || family == "uf")
        return resolve_partition(family == "pf" ? "pf:fixed" : family, data);
    return resolve_partition(family, data);
}

// ---------------------------------------------------------------------------

int run_fit(const Options& o, const Json& cfg) {
    Problem prob = load_problem(o);
    const Partition part = resolve_partition(o.partition, *prob.data);
    if (o.dry_run) {
        std::cout << Json{{"plan", "fit"}, {"partition", part.describe()}, {"n", prob.n()},
                          {"num_params", prob.num_params()}, {"outputs", {"fit.json"}},
                          {"config_hash", config_hash(cfg)}}.dump(2)
                  << '\n';
        return 0;
    }
    FitResult r = fit(prob, part, fit_options(o));
    write_json(fs::path(o.out) / "fit.json", stamped(fit_report(prob, r), cfg));
    return 0;
}

int run_simulate(const Options& o, const Json& cfg) {
    const LikelihoodKind lik = likelihood_from_string(o.likelihood);
    if (o.dry_run) {
        std::cout << Json{{"plan", "simulate"}, {"outputs", {"data.csv", "schema.json", "truth.json"}},
                          {"config_hash", config_hash(cfg)}}.dump(2)
                  << '\n';
        return 0;
    }
    CrossedDesign des = o.generator == "biregular"
                            ? gen_biregular(o.n, o.d1, o.d2, derive_seed(o.seed, {0}))
                            : gen_crossed_mcar(o.g1, o.g2, o.missing, derive_seed(o.seed, {0}));
    SimulatedData sim = simulate_responses(des, lik, derive_seed(o.seed, {1}));

    std::ostringstream csv;
    csv.precision(17);
    csv << "y," << (lik == LikelihoodKind::Binomial ? "trials," : "") << "f1,f2\n";
    for (Index i = 0; i < des.n(); ++i) {
        csv << sim.data.y(i) << ',';
        if (lik == LikelihoodKind::Binomial) csv << sim.data.trials(i) << ',';
        csv << des.cells[static_cast<std::size_t>(i)].first << ',' << des.cells[static_cast<std::size_t>(i)].second
            << '\n';
    }
    Json schema{{"response", "y"}, {"factors", {{{"name", "f1"}}, {{"name", "f2"}}}}};
    if (lik == LikelihoodKind::Binomial) schema["trials"] = "trials";

    Json truth{{"generator", des.generator}, {"method", des.method}, {"n", des.n()}, {"g1", des.g1}, {"g2", des.g2},
               {"intercept", sim.intercept}, {"sigma", sim.sigma}, {"factor_variances", sim.factor_variances},
               {"effects", {to_json(sim.effects[0]), to_json(sim.effects[1])}}};
    const fs::path out(o.out);
    write_text(out / "data.csv", csv.str());
    write_json(out / "schema.json", schema);
    write_json(out / "truth.json", stamped(truth, cfg));
    return 0;
}

/// Reads draws.bin (row-major float64) with the shape recorded in draws.json.
Matrix read_draws(const std::string& path) {
    fs::path bin(path);
    fs::path meta = bin;
    meta.replace_extension(".json");
    std::ifstream mj(meta);
    if (!mj) fail(ErrorKind::Io, "cannot read " + meta.string());
    Json m = Json::parse(mj);
    const Index rows = m.at("rows").get<Index>(), cols = m.at("cols").get<Index>();
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> x(rows, cols);
    std::ifstream f(bin, std::ios::binary);
    if (!f) fail(ErrorKind::Io, "cannot read " + bin.string());
    f.read(reinterpret_cast<char*>(x.data()), static_cast<std::streamsize>(sizeof(double) * rows * cols));
    if (f.gcount() != static_cast<std::streamsize>(sizeof(double) * rows * cols))
        fail(ErrorKind::Io, bin.string() + " is shorter than its header says");
    return x;
}

int run_uqf(const Options& o, const Json& cfg) {
    Problem prob = load_problem(o);
    std::vector<std::string> families = o.families;
    if (families.empty()) families = {o.partition};
    std::vector<Partition> parts;
    for (const auto& f : families) parts.push_back(family_partition(f, *prob.data));
    if (o.dry_run) {
        Json plan{{"plan", "uqf"}, {"outputs", {"metrics.json"}}, {"config_hash", config_hash(cfg)}};
        for (const auto& p : parts) plan["partitions"].push_back(p.describe());
        std::cout << plan.dump(2) << '\n';
        return 0;
    }
    Matrix draws;
    if (!o.draws.empty()) {
        draws = read_draws(o.draws);
        if (draws.cols() != prob.num_params())
            fail(ErrorKind::Validation, "draws have " + std::to_string(draws.cols()) + " columns, model has " +
                                            std::to_string(prob.num_params()) + " parameters");
    }
    Json out{{"families", Json::array()}};
    for (std::size_t f = 0; f < parts.size(); ++f) {
        FitResult r = fit(prob, parts[f], fit_options(o));
        const Matrix qp = export_q_precision(prob, r.state);
        // target at the converged q(phi)
        const auto ex = exact_target_moments(build_surrogate(prob, r.state.phi), Partition::uf(prob.num_factors()));
        Json jf{{"family", families[f]}, {"partition", parts[f].describe()}, {"converged", r.converged},
                {"iterations", r.iterations}, {"uqf_fixed_phi", uqf_analytic(ex.cov, qp)}};
        if (draws.size()) {
            jf["uqf_split_sample"] = uqf_json(uqf_split_sample(draws, qp, o.folds, o.top, derive_seed(o.seed, {f})));
            const QMoments mom = q_moments(prob, r.state);
            Rng rng(derive_seed(o.seed, {f, 1}));
            std::normal_distribution<double> nd;
            std::vector<double> tv;
            for (Index j = 0; j < prob.num_params(); ++j) {
                Vector qs(draws.rows());
                for (Index s = 0; s < qs.size(); ++s) qs(s) = mom.theta_mean(j) + std::sqrt(mom.theta_var(j)) * nd(rng);
                tv.push_back(tv_accuracy(qs, draws.col(j)));
            }
            jf["tv_accuracy"] = tv;
        }
        out["families"].push_back(jf);
    }
    write_json(fs::path(o.out) / "metrics.json", stamped(out, cfg));
    return 0;
}

int run_bounds(const Options& o, const Json& cfg) {
    Problem prob = load_problem(o);
    const Partition part = resolve_partition(o.partition, *prob.data);
    if (o.dry_run) {
        std::cout << Json{{"plan", "bounds"}, {"partition", part.describe()}, {"outputs", {"bounds.json"}},
                          {"config_hash", config_hash(cfg)}}.dump(2)
                  << '\n';
        return 0;
    }
    // bounds are evaluated at the q(phi) reached by the requested fit
    FitResult r = fit(prob, part, fit_options(o));
    const auto s = build_surrogate(prob, r.state.phi);
    Json j = bounds_json(bounds_report(s, *prob.data));
    j["partition"] = part.describe();
    j["auto_partition"] = resolve_partition("pf:auto", *prob.data).describe();
    write_json(fs::path(o.out) / "bounds.json", stamped(j, cfg));
    return 0;
}

int run_gibbs(const Options& o, const Json& cfg) {
    Problem prob = load_problem(o);
    if (o.dry_run) {
        std::cout << Json{{"plan", "gibbs"}, {"num_params", prob.num_params()}, {"outputs", {"draws.bin", "draws.json"}},
                          {"config_hash", config_hash(cfg)}}.dump(2)
                  << '\n';
        return 0;
    }
    GibbsOptions g;
    g.iters = o.iters;
    g.burn_in = o.burn_in;
    g.thin = o.thin;
    g.seed = derive_seed(o.seed, {0});
    GibbsDraws d = gibbs_gaussian(prob, g);
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = d.theta;
    const fs::path out(o.out);
    fs::create_directories(out);
    std::ofstream f(out / "draws.bin", std::ios::binary);
    f.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(sizeof(double) * rm.size()));
    if (!f) fail(ErrorKind::Io, "write failed for draws.bin");

    std::vector<std::string> names;
    const BlockLayout& layout = *prob.layout;
    for (Index k = 0; k < layout.num_blocks(); ++k)
        for (Index l = 0; l < layout.block(k).levels; ++l)
            for (Index dd = 0; dd < layout.block(k).dim; ++dd)
                names.push_back(layout.block(k).name + "[" + std::to_string(l) + "," + std::to_string(dd) + "]");
    Json meta{{"rows", rm.rows()}, {"cols", rm.cols()}, {"dtype", "float64"}, {"order", "row-major"},
              {"columns", names}, {"sigma2", std::vector<double>(d.sigma2.data(), d.sigma2.data() + d.sigma2.size())},
              {"seed", d.seed}, {"burn_in", d.burn_in}, {"thin", d.thin}};
    std::vector<std::string> warnings;
    posterior_cov_estimate(d.theta, &warnings);
    meta["warnings"] = warnings;
    write_json(out / "draws.json", stamped(meta, cfg));
    return 0;
}

int run_experiment(const Options& o, const Json& cfg) {
    const LikelihoodKind lik = likelihood_from_string(o.likelihood);
    SimConfig c = o.full_scale ? SimConfig::full_scale(lik) : SimConfig{};
    c.lik = lik;
    if (!o.grid.empty()) c.g_grid = o.grid;
    if (!o.full_scale) c.replicates = o.replicates;
    c.missing_prob = o.missing;
    c.seed = o.seed;
    c.tol = o.tol;
    c.max_iter = o.max_iter;
    c.jobs = o.jobs;
    c.gibbs_draws = lik == LikelihoodKind::Gaussian ? o.gibbs_draws : 0;
    c.validate();
    if (o.dry_run) {
        std::cout << Json{{"plan", "experiment"}, {"grid", c.g_grid}, {"replicates", c.replicates},
                          {"rows", c.g_grid.size() * 3}, {"outputs", {"experiment.csv", "manifest.json"}},
                          {"config_hash", config_hash(cfg)}}.dump(2)
                  << '\n';
        return 0;
    }
    GridResult r = run_grid(c);
    const fs::path out(o.out);
    write_text(out / "experiment.csv", grid_csv(r));
    Json manifest{{"grid", c.g_grid}, {"replicates", c.replicates}, {"missing_prob", c.missing_prob},
                  {"gibbs_draws", c.gibbs_draws}, {"split_max_params", c.split_max_params},
                  {"seed", c.seed}, {"jobs", c.jobs}, {"wall_seconds", r.wall_seconds}, {"failures", r.failures},
                  {"versions", {{"pfvi", "0.1.0"}, {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                                               std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                                               std::to_string(EIGEN_MINOR_VERSION)}}}};
    write_json(out / "manifest.json", stamped(manifest, cfg));
    return 0;
}

GaussianTarget target_from_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) fail(ErrorKind::Io, "cannot read " + path);
    Json j = Json::parse(f);
    GaussianTarget t;
    const auto rows = j.at("Q").get<std::vector<std::vector<double>>>();
    const auto p = static_cast<Index>(rows.size());
    t.Q.resize(p, p);
    for (Index i = 0; i < p; ++i) {
        if (static_cast<Index>(rows[static_cast<std::size_t>(i)].size()) != p) fail(ErrorKind::Schema, "Q must be square");
        for (Index k = 0; k < p; ++k) t.Q(i, k) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
    }
    t.mu = j.contains("mu") ? Vector(Eigen::Map<const Vector>(j["mu"].get<std::vector<double>>().data(), p))
                            : Vector::Zero(p);
    t.block_sizes = j.at("block_sizes").get<std::vector<Index>>();
    return t;
}

int run_rs_lab(const Options& o, const Json& cfg) {
    GaussianTarget t;
    std::vector<Index> collapsed = o.collapsed;
    if (!o.target.empty()) {
        t = target_from_json(o.target);
    } else {
        // fixed-phi target of a model at its initial q(phi)
        Problem prob = load_problem(o);
        const auto s = build_surrogate(prob, initial_phi(prob));
        const auto ex = exact_target_moments(s, Partition::uf(prob.num_factors()));
        t.Q = ex.precision;
        t.mu = ex.mean;
        for (Index k = 0; k < prob.num_blocks(); ++k) t.block_sizes.push_back(prob.layout->block(k).size());
        if (collapsed.empty()) collapsed = resolve_partition(o.partition, *prob.data).collapsed;
    }
    t.validate();
    if (o.dry_run) {
        std::cout << Json{{"plan", "rs-lab"}, {"dim", t.Q.rows()}, {"collapsed", collapsed},
                          {"outputs", {"trajectory.csv", "rs_report.json"}}, {"config_hash", config_hash(cfg)}}.dump(2)
                  << '\n';
        return 0;
    }
    DualityReport rep = duality_check(t, collapsed, o.sweeps, o.runs, derive_seed(o.seed, {0}));

    const NormalizedTarget nt = normalize_target(t, collapsed);
    const Vector z0 = nt.min_eigenvector();
    std::ostringstream csv;
    csv.precision(17);
    csv << "run_id,sweep,v_gap\n";
    for (int r = 0; r < std::min(o.keep_runs, o.runs); ++r) {
        auto tr = rs_cavi(nt, z0, o.sweeps, derive_seed(o.seed, {1, static_cast<std::uint64_t>(r)}));
        for (std::size_t s = 0; s < tr.gaps.size(); ++s) csv << r << ',' << s << ',' << tr.gaps[s] << '\n';
    }
    Json j{{"uqf", rep.uqf}, {"num_uncollapsed", rep.num_uncollapsed}, {"mean_gap", rep.mean_gap},
           {"se_gap", rep.se_gap}, {"lower", rep.lower}, {"upper", rep.upper}, {"fitted_rate", rep.fitted_rate},
           {"rate_bracket", {rep.rate_lo, rep.rate_hi}}, {"rate_in_bracket", rep.rate_in_bracket},
           {"bracket_satisfied", rep.bracket_satisfied}};
    const fs::path out(o.out);
    write_text(out / "trajectory.csv", csv.str());
    write_json(out / "rs_report.json", stamped(j, cfg));
    return 0;
}

void print_error(const std::string& kind, const std::string& message) {
    std::cerr << Json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Partially factorized variational inference for crossed mixed models"};
    app.require_subcommand(1);
    Options o;

    auto model_flags = [&](CLI::App* sc, bool required) {
        auto* d = sc->add_option("--data", o.data, "long-format CSV");
        auto* s = sc->add_option("--schema", o.schema, "JSON schema for the CSV");
        if (required) {
            d->required();
            s->required();
        }
    };
    auto common = [&](CLI::App* sc) {
        sc->add_option("--likelihood", o.likelihood)->check(CLI::IsMember({"gaussian", "binomial"}));
        sc->add_option("--seed", o.seed);
        sc->add_option("--out", o.out, "output directory");
        sc->add_flag("--dry-run", o.dry_run, "validate and print the resolved plan");
    };
    auto fitting = [&](CLI::App* sc) {
        sc->add_option("--partition", o.partition, "ff, uf, pf:fixed, pf:auto or a list of collapsed blocks");
        sc->add_option("--tol", o.tol, "relative ELBO tolerance");
        sc->add_option("--max-iter", o.max_iter);
    };

    auto* fit_cmd = app.add_subcommand("fit", "fit q(theta, phi) by coordinate ascent");
    model_flags(fit_cmd, true);
    common(fit_cmd);
    fitting(fit_cmd);

    auto* sim_cmd = app.add_subcommand("simulate", "generate a crossed design and responses");
    common(sim_cmd);
    sim_cmd->add_option("--generator", o.generator)->check(CLI::IsMember({"mcar", "biregular"}));
    sim_cmd->add_option("--g1", o.g1);
    sim_cmd->add_option("--g2", o.g2);
    sim_cmd->add_option("--missing", o.missing, "MCAR cell missing probability");
    sim_cmd->add_option("--n", o.n, "biregular sample size");
    sim_cmd->add_option("--d1", o.d1);
    sim_cmd->add_option("--d2", o.d2);

    auto* uqf_cmd = app.add_subcommand("uqf", "uncertainty quantification fraction of fitted families");
    model_flags(uqf_cmd, true);
    common(uqf_cmd);
    fitting(uqf_cmd);
    uqf_cmd->add_option("--draws", o.draws, "draws.bin from the gibbs command");
    uqf_cmd->add_option("--families", o.families, "partitions to compare (ff, pf, uf or any --partition value)");
    uqf_cmd->add_option("--folds", o.folds);
    uqf_cmd->add_option("--top", o.top, "generalized eigenvectors per fold");

    auto* bounds_cmd = app.add_subcommand("bounds", "theoretical UQF bounds for the design");
    model_flags(bounds_cmd, true);
    common(bounds_cmd);
    fitting(bounds_cmd);

    auto* gibbs_cmd = app.add_subcommand("gibbs", "blocked Gibbs sampler (Gaussian likelihood)");
    model_flags(gibbs_cmd, true);
    common(gibbs_cmd);
    gibbs_cmd->add_option("--iters", o.iters);
    gibbs_cmd->add_option("--burn-in", o.burn_in);
    gibbs_cmd->add_option("--thin", o.thin);

    auto* exp_cmd = app.add_subcommand("experiment", "UQF and timing grid over G");
    common(exp_cmd);
    exp_cmd->add_option("--grid", o.grid, "values of G1 = G2");
    exp_cmd->add_option("--replicates", o.replicates);
    exp_cmd->add_option("--missing", o.missing);
    exp_cmd->add_option("--gibbs-draws", o.gibbs_draws);
    exp_cmd->add_option("--tol", o.tol);
    exp_cmd->add_option("--max-iter", o.max_iter);
    exp_cmd->add_option("--jobs", o.jobs);
    exp_cmd->add_flag("--full-scale", o.full_scale, "G from 32 to 1024 with 100 replicates");

    auto* rs_cmd = app.add_subcommand("rs-lab", "random-scan coordinate ascent on a Gaussian target");
    model_flags(rs_cmd, false);
    common(rs_cmd);
    rs_cmd->add_option("--target", o.target, "JSON with Q, mu, block_sizes");
    rs_cmd->add_option("--partition", o.partition);
    rs_cmd->add_option("--collapsed", o.collapsed, "collapsed block indices of the target");
    rs_cmd->add_option("--sweeps", o.sweeps);
    rs_cmd->add_option("--runs", o.runs);
    rs_cmd->add_option("--keep-runs", o.keep_runs, "runs written to trajectory.csv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print_error("usage", e.what());
        return 2;
    }

    o.command = app.get_subcommands().front()->get_name();
    const Json cfg = config_json(o);
    try {
        if (o.command == "fit") return run_fit(o, cfg);
        if (o.command == "simulate") return run_simulate(o, cfg);
        if (o.command == "uqf") return run_uqf(o, cfg);
        if (o.command == "bounds") return run_bounds(o, cfg);
        if (o.command == "gibbs") return run_gibbs(o, cfg);
        if (o.command == "experiment") return run_experiment(o, cfg);
        return run_rs_lab(o, cfg);
    } catch (const Error& e) {
        print_error(std::string(to_string(e.kind())), e.what());
    } catch (const Json::exception& e) {
        print_error("schema", e.what());
    } catch (const std::exception& e) {
        print_error("internal", e.what());
    }
    return 1;
}
