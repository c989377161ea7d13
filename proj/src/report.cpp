#include "pfvi/report.hpp"

#include "pfvi/rng.hpp"

#include <cmath>
#include <cstdio>

namespace pfvi {

namespace {

Json num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

}  // namespace

Json to_json(const Vector& v) {
    Json a = Json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(num(v(i)));
    return a;
}

Json to_json(const Matrix& m) {
    Json a = Json::array();
    for (Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Vector(m.row(i).transpose())));
    return a;
}

Json phi_report(const Problem& problem, const PhiParams& phi) {
    Json j;
    Json sig = Json::array();
    for (std::size_t f = 0; f < phi.iw_df.size(); ++f)
        sig.push_back({{"factor", problem.data->factors[f].name},
                       {"iw_df", phi.iw_df[f]},
                       {"iw_scale", to_json(phi.iw_scale[f])},
                       {"mean_sigma_inv", to_json(phi.expected_sigma_inv(static_cast<Index>(f)))}});
    j["sigma"] = sig;
    if (problem.lik == LikelihoodKind::Gaussian) {
        j["sigma2"] = {{"ig_shape", phi.ig_shape}, {"ig_rate", phi.ig_rate}, {"mean_inv", phi.ig_shape / phi.ig_rate}};
    } else {
        j["omega"] = {{"b", to_json(phi.pg_b)}, {"c", to_json(phi.pg_c)}};
    }
    return j;
}

Json fit_report(const Problem& problem, const FitResult& result) {
    const auto& st = result.state;
    const BlockLayout& layout = *problem.layout;
    const QMoments mom = q_moments(problem, st);
    Json j;
    j["likelihood"] = to_string(problem.lik);
    j["partition"] = {{"collapsed", st.part.collapsed}, {"uncollapsed", st.part.uncollapsed},
                      {"describe", st.part.describe()}};
    j["iterations"] = result.iterations;
    j["converged"] = result.converged;
    j["elbo_trace"] = result.elbo_trace;
    j["elbo"] = result.elbo_trace.empty() ? Json(nullptr) : Json(result.elbo_trace.back());
    Json blocks = Json::array();
    for (Index k = 0; k < layout.num_blocks(); ++k) {
        const Block& b = layout.block(k);
        Json jb;
        jb["block"] = k;
        jb["name"] = b.name;
        jb["levels"] = b.levels;
        jb["dim"] = b.dim;
        jb["collapsed"] = st.part.is_collapsed(k);
        if (k == 0) jb["coefficients"] = problem.data->fixed_names;
        else {
            jb["slopes"] = problem.data->factors[static_cast<std::size_t>(k - 1)].slope_columns;
            jb["level_labels"] = problem.data->factors[static_cast<std::size_t>(k - 1)].level_labels;
        }
        Matrix mean(b.levels, b.dim), var(b.levels, b.dim);
        for (Index g = 0; g < b.levels; ++g)
            for (Index d = 0; d < b.dim; ++d) {
                mean(g, d) = mom.theta_mean(layout.offset(k) + g * b.dim + d);
                var(g, d) = mom.theta_var(layout.offset(k) + g * b.dim + d);
            }
        jb["mean"] = to_json(mean);
        jb["variance"] = to_json(var);
        blocks.push_back(jb);
    }
    j["blocks"] = blocks;
    j["phi"] = phi_report(problem, st.phi);
    double total = 0.0;
    for (double s : result.sweep_seconds) total += s;
    j["mean_sweep_seconds"] = result.sweep_seconds.empty() ? Json(nullptr) : Json(total / result.sweep_seconds.size());
    return j;
}

Json bounds_json(const BoundsReport& r) {
    Json j;
    j["num_factors"] = r.num_factors;
    j["ff_upper"] = num(r.ff_upper);
    j["pf_exact"] = r.pf_exact ? num(*r.pf_exact) : Json(nullptr);
    j["rg_lower"] = r.rg_lower ? num(*r.rg_lower) : Json(nullptr);
    j["lambda_aux"] = r.lambda_aux ? num(*r.lambda_aux) : Json(nullptr);
    j["laplacian_gap"] = r.laplacian_gap ? num(*r.laplacian_gap) : Json(nullptr);
    j["balanced"] = r.balanced;
    return j;
}

Json uqf_json(const UqfEstimate& est) {
    return {{"value", num(est.value)}, {"method", est.method}, {"folds", est.fold_values},
            {"eigvec_count", est.eigvec_count}};
}

std::string config_hash(const Json& config) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(config.dump())));
    return buf;
}

}  // namespace pfvi
