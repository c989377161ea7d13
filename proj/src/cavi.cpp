#include "pfvi/cavi.hpp"

#include "pfvi/error.hpp"

#include <boost/math/special_functions/digamma.hpp>

#include <chrono>
#include <cmath>
#include <numbers>

namespace pfvi {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double digamma(double x) { return boost::math::digamma(x); }

double lgamma_mv(Index d, double x) {
    double out = static_cast<double>(d * (d - 1)) / 4.0 * std::log(std::numbers::pi);
    for (Index j = 1; j <= d; ++j) out += std::lgamma(x + (1.0 - static_cast<double>(j)) / 2.0);
    return out;
}

double logdet_spd(const Matrix& m) {
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() != Eigen::Success) fail(ErrorKind::Singular, "matrix is not positive definite");
    return 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
}

/// E log|Sigma| under IW(a, Phi).
double iw_expected_logdet(double a, const Matrix& scale) {
    const Index d = scale.rows();
    double out = logdet_spd(scale) - static_cast<double>(d) * std::log(2.0);
    for (Index j = 1; j <= d; ++j) out -= digamma((a - static_cast<double>(j) + 1.0) / 2.0);
    return out;
}

double log_cosh(double x) {
    x = std::abs(x);
    return x + std::log1p(std::exp(-2.0 * x)) - std::log(2.0);
}

void require_uncollapsed(const VariationalState& state, Index k) {
    if (k < 0 || k >= static_cast<Index>(state.mu.size()) || state.part.is_collapsed(k))
        fail(ErrorKind::Precondition, "block " + std::to_string(k) + " is not an uncollapsed block");
}

LambdaFactor compute_lambda(const GaussianSurrogate& s, const CollapsedLaw& law, Index k,
                            std::uint64_t generation) {
    const Block& blk = s.layout->block(k);
    LambdaFactor f;
    f.block = k;
    f.levels = blk.levels;
    f.dim = blk.dim;
    f.generation = generation;
    const Index d = blk.dim;
    std::vector<Matrix> gram(static_cast<std::size_t>(blk.levels), Matrix::Zero(d, d));
    const SparseRowMatrix& w = s.W[static_cast<std::size_t>(k)];
    Vector row(d);
    for (Index i = 0; i < w.outerSize(); ++i) {
        Index first = -1;
        Index j = 0;
        for (SparseRowMatrix::InnerIterator it(w, i); it; ++it, ++j) {
            if (first < 0) first = it.col();
            row(it.col() % d) = it.value();
        }
        if (first < 0) continue;
        if (j != d) {
            // explicit zeros may be dropped from the design; rebuild the row
            row.setZero();
            for (SparseRowMatrix::InnerIterator it(w, i); it; ++it) row(it.col() % d) = it.value();
        }
        gram[static_cast<std::size_t>(first / d)].selfadjointView<Eigen::Lower>().rankUpdate(row);
    }
    f.lam0.resize(gram.size());
    for (std::size_t g = 0; g < gram.size(); ++g) {
        Matrix m = gram[g].selfadjointView<Eigen::Lower>();
        if (k > 0) m += s.T[static_cast<std::size_t>(k)];
        Eigen::LLT<Matrix> llt(m);
        if (llt.info() != Eigen::Success)
            fail(ErrorKind::Singular, "W_k'W_k + P_k is singular for block '" + blk.name + "' level " +
                                          std::to_string(g));
        f.logdet_lam0 -= 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
        f.lam0[g] = llt.solve(Matrix::Identity(d, d));
    }
    f.logdet = f.logdet_lam0;
    if (law.system && !law.system->empty()) {
        const Matrix& b = law.b[static_cast<std::size_t>(k)];
        Matrix ft(b.rows(), b.cols());  // (Lambda^0 B')' = B Lambda^0
        for (Index g = 0; g < f.levels; ++g)
            ft.middleCols(g * d, d).noalias() =
                b.middleCols(g * d, d) * f.lam0[static_cast<std::size_t>(g)];
        Matrix inner = law.system->h();
        inner.noalias() -= ft * b.transpose();
        Eigen::LLT<Matrix> llt(inner);
        Vector ld;
        bool ok = llt.info() == Eigen::Success;
        if (ok) {
            ld = Matrix(llt.matrixL()).diagonal();
            ok = ld.allFinite() && ld.minCoeff() > 0.0;
        }
        if (!ok)
            fail(ErrorKind::Singular, "P_C + W_C'(I - W_k Lambda_k^0 W_k')W_C is not positive definite "
                                      "for block '" + blk.name + "'");
        f.r = llt.matrixL().solve(ft);
        f.logdet += law.system->logdet() - 2.0 * ld.array().log().sum();
    }
    return f;
}

/// E[theta_C] = H_C^{-1} W_C'(nu - D eta_U).
Vector collapsed_mean(const GaussianSurrogate& s, const VariationalState& state) {
    const auto& sys = *state.law.system;
    if (sys.empty()) return Vector();
    Vector r = s.nu - s.d_diag.cwiseProduct(state.eta_u);
    return sys.solve(Vector(sys.wc().transpose() * r));
}

void update_phi_from(const Problem& problem, VariationalState& state, const QMoments& mom) {
    const auto& data = *problem.data;
    PhiParams& phi = state.phi;
    const bool gauss = problem.lik == LikelihoodKind::Gaussian;
    const double tau = phi.tau(problem.lik);
    for (Index f = 0; f < data.num_factors(); ++f) {
        const auto fi = static_cast<std::size_t>(f);
        phi.iw_df[fi] = problem.prior.iw_df[fi] + static_cast<double>(data.factors[fi].levels);
        phi.iw_scale[fi] = problem.prior.iw_scale[fi] + (gauss ? tau : 1.0) * mom.second_moment[fi];
    }
    if (gauss) {
        double count = static_cast<double>(data.n());
        double rate = 0.0;
        for (Index i = 0; i < data.n(); ++i) {
            const double e = data.y(i) - mom.eta_mean(i);
            rate += e * e + mom.eta_var(i);
        }
        for (Index f = 0; f < data.num_factors(); ++f) {
            const auto fi = static_cast<std::size_t>(f);
            count += static_cast<double>(data.factors[fi].levels * data.factors[fi].effect_dim);
            rate += (phi.expected_sigma_inv(f) * mom.second_moment[fi]).trace();
        }
        phi.ig_shape = count / 2.0;
        phi.ig_rate = rate / 2.0;
    } else {
        phi.pg_b = data.trials.cast<double>();
        phi.pg_c = (mom.eta_mean.array().square() + mom.eta_var.array()).sqrt().matrix();
    }
}

double elbo_from(const Problem& problem, const VariationalState& state, const QMoments& mom) {
    const auto& data = *problem.data;
    const PhiParams& phi = state.phi;
    const Index n = data.n();
    double out = 0.0;

    double sum_gd = 0.0;
    for (const auto& f : data.factors) sum_gd += static_cast<double>(f.levels * f.effect_dim);

    double quad_prior = 0.0;     // sum_k tr(E[Sigma_k^{-1}] S_k)
    double logdet_prior = 0.0;   // sum_k G_k E log|Sigma_k|
    for (Index f = 0; f < data.num_factors(); ++f) {
        const auto fi = static_cast<std::size_t>(f);
        const Index d = data.factors[fi].effect_dim;
        const double dd = static_cast<double>(d);
        const Matrix e_inv = phi.expected_sigma_inv(f);
        const double e_logdet = iw_expected_logdet(phi.iw_df[fi], phi.iw_scale[fi]);
        quad_prior += (e_inv * mom.second_moment[fi]).trace();
        logdet_prior += static_cast<double>(data.factors[fi].levels) * e_logdet;

        const double a0 = problem.prior.iw_df[fi];
        const Matrix& phi0 = problem.prior.iw_scale[fi];
        out += a0 / 2.0 * logdet_spd(phi0) - a0 * dd / 2.0 * std::log(2.0) - lgamma_mv(d, a0 / 2.0) -
               (a0 + dd + 1.0) / 2.0 * e_logdet - 0.5 * (phi0 * e_inv).trace();

        const double a = phi.iw_df[fi];
        out += -a / 2.0 * logdet_spd(phi.iw_scale[fi]) + a * dd / 2.0 * std::log(2.0) +
               lgamma_mv(d, a / 2.0) + (a + dd + 1.0) / 2.0 * e_logdet + a * dd / 2.0;
    }

    if (problem.lik == LikelihoodKind::Gaussian) {
        const double a = phi.ig_shape;
        const double b = phi.ig_rate;
        const double tau = a / b;
        const double e_logs2 = std::log(b) - digamma(a);
        double sq = 0.0;
        for (Index i = 0; i < n; ++i) {
            const double e = data.y(i) - mom.eta_mean(i);
            sq += e * e + mom.eta_var(i);
        }
        const double count = static_cast<double>(n) + sum_gd;
        out += -count / 2.0 * (kLog2Pi + e_logs2) - 0.5 * tau * sq - 0.5 * tau * quad_prior -
               0.5 * logdet_prior;
        out += -e_logs2;
        out += a + std::log(b) + std::lgamma(a) - (1.0 + a) * digamma(a);
    } else {
        for (Index i = 0; i < n; ++i) {
            const double ni = data.trials(i);
            const double yi = data.y(i);
            const double bi = phi.pg_b(i);
            const double ci = phi.pg_c(i);
            const double ew = pg_mean(bi, ci);
            const double eta2 = mom.eta_mean(i) * mom.eta_mean(i) + mom.eta_var(i);
            out += std::lgamma(ni + 1.0) - std::lgamma(yi + 1.0) - std::lgamma(ni - yi + 1.0) -
                   ni * std::log(2.0) + (yi - ni / 2.0) * mom.eta_mean(i) - 0.5 * ew * eta2 -
                   bi * log_cosh(ci / 2.0) + 0.5 * ci * ci * ew;
        }
        out += -sum_gd / 2.0 * kLog2Pi - 0.5 * quad_prior - 0.5 * logdet_prior;
    }

    double ent = -state.law.system->logdet();
    for (Index k : state.part.uncollapsed) ent += state.lambda[static_cast<std::size_t>(k)]->logdet;
    const double p = static_cast<double>(problem.num_params());
    out += 0.5 * ent + p / 2.0 * (1.0 + kLog2Pi);
    return out;
}

double max_abs_diff(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
    return a.size() ? (a - b).cwiseAbs().maxCoeff() : 0.0;
}

}  // namespace

// ---------------------------------------------------------------------------
// LambdaFactor

Vector LambdaFactor::apply(const Vector& a) const {
    if (a.size() != size()) fail(ErrorKind::Precondition, "apply_lambda: vector has wrong length");
    Vector out(size());
    for (Index g = 0; g < levels; ++g)
        out.segment(g * dim, dim).noalias() = lam0[static_cast<std::size_t>(g)] * a.segment(g * dim, dim);
    if (r.size()) out.noalias() += r.transpose() * (r * a);
    return out;
}

Matrix LambdaFactor::apply(const Matrix& a) const {
    if (a.rows() != size()) fail(ErrorKind::Precondition, "apply_lambda: matrix has wrong row count");
    Matrix out(size(), a.cols());
    for (Index g = 0; g < levels; ++g)
        out.middleRows(g * dim, dim).noalias() =
            lam0[static_cast<std::size_t>(g)] * a.middleRows(g * dim, dim);
    if (r.size()) out.noalias() += r.transpose() * (r * a);
    return out;
}

std::vector<Matrix> LambdaFactor::diag_blocks() const {
    std::vector<Matrix> out = lam0;
    if (r.size()) {
        for (Index g = 0; g < levels; ++g) {
            auto rg = r.middleCols(g * dim, dim);
            out[static_cast<std::size_t>(g)].noalias() += rg.transpose() * rg;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// State and updates

PhiParams initial_phi(const Problem& problem) {
    const auto& data = *problem.data;
    PhiParams phi;
    for (Index f = 0; f < data.num_factors(); ++f) {
        const auto fi = static_cast<std::size_t>(f);
        const double a0 = problem.prior.iw_df[fi];
        const double a = a0 + static_cast<double>(data.factors[fi].levels);
        phi.iw_df.push_back(a);
        phi.iw_scale.push_back(problem.prior.iw_scale[fi] * (a / a0));
    }
    const double n = static_cast<double>(data.n());
    if (problem.lik == LikelihoodKind::Gaussian) {
        double var = 1.0;
        if (data.n() > 1) {
            const double m = data.y.mean();
            var = (data.y.array() - m).square().sum() / (n - 1.0);
        }
        if (!(var > 0) || !std::isfinite(var)) var = 1.0;
        phi.ig_shape = n / 2.0;
        phi.ig_rate = n * var / 2.0;
    } else {
        phi.pg_b = data.trials.cast<double>();
        phi.pg_c = Vector::Zero(data.n());
    }
    return phi;
}

void refresh_surrogate(const Problem& problem, VariationalState& state) {
    auto s = std::make_shared<const GaussianSurrogate>(build_surrogate(problem, state.phi));
    auto sys = std::make_shared<const CollapsedSystem>(*s, state.part);
    CollapsedLaw law;
    law.system = sys;
    const auto nb = static_cast<std::size_t>(problem.num_blocks());
    law.a.assign(nb, Matrix());
    law.b.assign(nb, Matrix());
    if (!sys->empty()) {
        law.offset = sys->solve(Vector(sys->wc().transpose() * s->nu));
        const SparseRowMatrix wct = sys->wc().transpose();
        for (Index k : state.part.uncollapsed) {
            const auto ki = static_cast<std::size_t>(k);
            law.b[ki] = Matrix(wct * s->W[ki]);
            law.a[ki] = -sys->solve(law.b[ki]);
        }
    }
    state.surrogate = std::move(s);
    state.law = std::move(law);
    ++state.generation;
}

VariationalState init_state(const Problem& problem, const Partition& part,
                            const std::optional<PhiParams>& phi0) {
    const Index K = problem.num_factors();
    if (!part.collapsed.empty() && part.collapsed.back() > K)
        fail(ErrorKind::Schema, "partition refers to a block beyond K");
    if (static_cast<Index>(part.collapsed.size() + part.uncollapsed.size()) != K + 1)
        fail(ErrorKind::Schema, "partition does not cover blocks 0..K");
    VariationalState state;
    state.part = part;
    state.phi = phi0 ? *phi0 : initial_phi(problem);
    const auto nb = static_cast<std::size_t>(K + 1);
    state.mu.assign(nb, Vector());
    state.lambda.assign(nb, std::nullopt);
    for (Index k : part.uncollapsed)
        state.mu[static_cast<std::size_t>(k)] = Vector::Zero(problem.layout->block(k).size());
    state.eta_u = Vector::Zero(problem.n());
    refresh_surrogate(problem, state);
    for (Index k : part.uncollapsed)
        state.lambda[static_cast<std::size_t>(k)] =
            compute_lambda(*state.surrogate, state.law, k, state.generation);
    return state;
}

void update_random_block(const Problem& problem, VariationalState& state, Index k) {
    require_uncollapsed(state, k);
    const auto ki = static_cast<std::size_t>(k);
    const GaussianSurrogate& s = *state.surrogate;
    auto& lam = state.lambda[ki];
    if (!lam || lam->generation != state.generation)
        lam = compute_lambda(s, state.law, k, state.generation);
    const SparseRowMatrix& z = problem.Z[ki];
    Vector& mu = state.mu[ki];
    Vector others = state.eta_u - z * mu;
    Vector r = s.nu - s.d_diag.cwiseProduct(others);
    Vector v = s.W[ki].transpose() * state.law.system->apply_projector(r);
    mu = lam->apply(v);
    state.eta_u = others + z * mu;
}

void update_phi(const Problem& problem, VariationalState& state) {
    update_phi_from(problem, state, q_moments(problem, state));
}

Vector apply_lambda(const VariationalState& state, Index k, const Vector& a) {
    require_uncollapsed(state, k);
    const auto& lam = state.lambda[static_cast<std::size_t>(k)];
    if (!lam || lam->generation != state.generation)
        fail(ErrorKind::InternalState, "Lambda factors for block " + std::to_string(k) +
                                           " are stale; update the block first");
    return lam->apply(a);
}

std::vector<Matrix> extract_lambda_blocks(const VariationalState& state, Index k) {
    require_uncollapsed(state, k);
    const auto& lam = state.lambda[static_cast<std::size_t>(k)];
    if (!lam || lam->generation != state.generation)
        fail(ErrorKind::InternalState, "Lambda factors for block " + std::to_string(k) +
                                           " are stale; update the block first");
    return lam->diag_blocks();
}

double lambda_logdet(const VariationalState& state, Index k) {
    require_uncollapsed(state, k);
    const auto& lam = state.lambda[static_cast<std::size_t>(k)];
    if (!lam) fail(ErrorKind::InternalState, "Lambda factors for block " + std::to_string(k) + " missing");
    return lam->logdet;
}

// ---------------------------------------------------------------------------
// Moments

QMoments q_moments(const Problem& problem, const VariationalState& state) {
    const GaussianSurrogate& s = *state.surrogate;
    const BlockLayout& layout = *problem.layout;
    const CollapsedSystem& sys = *state.law.system;
    const Index n = problem.n();
    const Index pc = sys.dim();
    QMoments m;
    m.theta_mean = Vector::Zero(layout.num_params());
    m.theta_var = Vector::Zero(layout.num_params());

    // Means.
    Vector mean_c = collapsed_mean(s, state);
    for (std::size_t j = 0; j < sys.blocks().size(); ++j) {
        const Index k = sys.blocks()[j];
        m.theta_mean.segment(layout.offset(k), layout.block(k).size()) =
            mean_c.segment(sys.local_offset(j), layout.block(k).size());
    }
    for (Index k : state.part.uncollapsed)
        m.theta_mean.segment(layout.offset(k), layout.block(k).size()) =
            state.mu[static_cast<std::size_t>(k)];
    m.eta_mean = Vector::Zero(n);
    for (Index k = 0; k < layout.num_blocks(); ++k)
        m.eta_mean += problem.Z[static_cast<std::size_t>(k)] *
                      m.theta_mean.segment(layout.offset(k), layout.block(k).size());

    // Covariance pieces: E_k = Lambda_k A_k' and Cov_C = H^{-1} + sum_k A_k E_k.
    std::vector<Matrix> e(static_cast<std::size_t>(layout.num_blocks()));
    std::vector<std::vector<Matrix>> lam_blocks(static_cast<std::size_t>(layout.num_blocks()));
    if (pc > 0) m.cov_c = sys.h_inv();
    for (Index k : state.part.uncollapsed) {
        const auto ki = static_cast<std::size_t>(k);
        const LambdaFactor& lam = *state.lambda[ki];
        lam_blocks[ki] = lam.diag_blocks();
        if (pc > 0) {
            e[ki] = lam.apply(Matrix(state.law.a[ki].transpose()));
            m.cov_c.noalias() += state.law.a[ki] * e[ki];
        }
    }

    // Marginal variances and second moments per level.
    m.second_moment.assign(static_cast<std::size_t>(problem.num_factors()), Matrix());
    for (Index k = 0; k < layout.num_blocks(); ++k) {
        const Block& b = layout.block(k);
        const Index d = b.dim;
        const auto ki = static_cast<std::size_t>(k);
        Index c_off = -1;
        for (std::size_t j = 0; j < sys.blocks().size(); ++j)
            if (sys.blocks()[j] == k) c_off = sys.local_offset(j);
        Matrix acc = Matrix::Zero(d, d);
        for (Index g = 0; g < b.levels; ++g) {
            Matrix v = c_off >= 0 ? Matrix(m.cov_c.block(c_off + g * d, c_off + g * d, d, d))
                                  : lam_blocks[ki][static_cast<std::size_t>(g)];
            m.theta_var.segment(layout.offset(k) + g * d, d) = v.diagonal();
            Vector mg = m.theta_mean.segment(layout.offset(k) + g * d, d);
            acc += v + mg * mg.transpose();
        }
        if (k > 0) m.second_moment[ki - 1] = acc;
    }

    // Var(eta_i) from the joint law without forming the joint covariance.
    m.eta_var.resize(n);
    std::vector<Index> cidx;
    std::vector<double> cval;
    for (Index i = 0; i < n; ++i) {
        cidx.clear();
        cval.clear();
        for (std::size_t j = 0; j < sys.blocks().size(); ++j) {
            const auto& z = problem.Z[static_cast<std::size_t>(sys.blocks()[j])];
            for (SparseRowMatrix::InnerIterator it(z, i); it; ++it) {
                cidx.push_back(sys.local_offset(j) + it.col());
                cval.push_back(it.value());
            }
        }
        double v = 0.0;
        for (std::size_t a = 0; a < cidx.size(); ++a)
            for (std::size_t b = 0; b < cidx.size(); ++b) v += cval[a] * cval[b] * m.cov_c(cidx[a], cidx[b]);
        for (Index k : state.part.uncollapsed) {
            const auto ki = static_cast<std::size_t>(k);
            const auto& z = problem.Z[ki];
            const Index d = layout.block(k).dim;
            for (SparseRowMatrix::InnerIterator it(z, i); it; ++it) {
                const Index g = it.col() / d;
                const Matrix& lb = lam_blocks[ki][static_cast<std::size_t>(g)];
                for (SparseRowMatrix::InnerIterator jt(z, i); jt; ++jt)
                    v += it.value() * jt.value() * lb(it.col() % d, jt.col() % d);
                if (pc > 0) {
                    double cross = 0.0;
                    for (std::size_t a = 0; a < cidx.size(); ++a) cross += e[ki](it.col(), cidx[a]) * cval[a];
                    v += 2.0 * it.value() * cross;
                }
            }
        }
        m.eta_var(i) = std::max(v, 0.0);
    }
    return m;
}

double elbo(const Problem& problem, const VariationalState& state) {
    return elbo_from(problem, state, q_moments(problem, state));
}

// ---------------------------------------------------------------------------
// Fit

FitResult fit(const Problem& problem, const Partition& part, const FitOptions& opts) {
    using clock = std::chrono::steady_clock;
    FitResult res;
    res.state = init_state(problem, part, opts.initial_phi);
    VariationalState& state = res.state;
    QMoments mom = q_moments(problem, state);
    res.elbo_trace.push_back(elbo_from(problem, state, mom));
    Vector prev_mean = mom.theta_mean;

    for (int it = 1; it <= opts.max_iter; ++it) {
        const auto t0 = clock::now();
        if (opts.update_phi) {
            update_phi_from(problem, state, mom);
            refresh_surrogate(problem, state);
        }
        for (Index k : state.part.uncollapsed) update_random_block(problem, state, k);
        res.sweep_seconds.push_back(std::chrono::duration<double>(clock::now() - t0).count());

        mom = q_moments(problem, state);
        const double e = elbo_from(problem, state, mom);
        const double delta = e - res.elbo_trace.back();
        res.elbo_trace.push_back(e);
        res.iterations = it;
        bool done = std::abs(delta) < opts.tol || std::isinf(opts.tol);
        if (done && opts.mean_tol > 0) done = max_abs_diff(mom.theta_mean, prev_mean) < opts.mean_tol;
        prev_mean = mom.theta_mean;
        if (done) {
            res.converged = true;
            break;
        }
    }
    state.elbo_trace = res.elbo_trace;
    return res;
}

// ---------------------------------------------------------------------------
// Dense views

Vector q_mean(const Problem& problem, const VariationalState& state) {
    const BlockLayout& layout = *problem.layout;
    Vector out(layout.num_params());
    const auto& sys = *state.law.system;
    Vector mean_c = collapsed_mean(*state.surrogate, state);
    for (std::size_t j = 0; j < sys.blocks().size(); ++j) {
        const Index k = sys.blocks()[j];
        out.segment(layout.offset(k), layout.block(k).size()) =
            mean_c.segment(sys.local_offset(j), layout.block(k).size());
    }
    for (Index k : state.part.uncollapsed)
        out.segment(layout.offset(k), layout.block(k).size()) = state.mu[static_cast<std::size_t>(k)];
    return out;
}

namespace {

/// Dense Lambda_k for every U block plus index lists in natural order.
struct DenseParts {
    std::vector<Index> ic;
    std::vector<std::vector<Index>> iu;
    std::vector<Matrix> lam;
};

DenseParts dense_parts(const Problem& problem, const VariationalState& state) {
    DenseParts d;
    d.ic = block_indices(*problem.layout, state.part.collapsed);
    for (Index k : state.part.uncollapsed) {
        d.iu.push_back(block_indices(*problem.layout, {k}));
        const LambdaFactor& lam = *state.lambda[static_cast<std::size_t>(k)];
        d.lam.push_back(lam.apply(Matrix(Matrix::Identity(lam.size(), lam.size()))));
    }
    return d;
}

}  // namespace

Matrix q_covariance(const Problem& problem, const VariationalState& state, Index guard) {
    const Index p = problem.num_params();
    check_dense_guard(p, guard, "q covariance");
    DenseParts d = dense_parts(problem, state);
    Matrix cov = Matrix::Zero(p, p);
    const auto& sys = *state.law.system;
    Matrix cov_c = sys.empty() ? Matrix() : sys.h_inv();
    for (std::size_t u = 0; u < state.part.uncollapsed.size(); ++u) {
        const Index k = state.part.uncollapsed[u];
        cov(d.iu[u], d.iu[u]) = d.lam[u];
        if (!sys.empty()) {
            const Matrix& a = state.law.a[static_cast<std::size_t>(k)];
            Matrix cross = a * d.lam[u];  // Cov(theta_C, theta_k)
            cov(d.ic, d.iu[u]) = cross;
            cov(d.iu[u], d.ic) = cross.transpose();
            cov_c.noalias() += cross * a.transpose();
        }
    }
    if (!sys.empty()) cov(d.ic, d.ic) = cov_c;
    return cov;
}

Matrix export_q_precision(const Problem& problem, const VariationalState& state, Index guard) {
    const Index p = problem.num_params();
    check_dense_guard(p, guard, "q precision");
    DenseParts d = dense_parts(problem, state);
    Matrix q = Matrix::Zero(p, p);
    const auto& sys = *state.law.system;
    if (!sys.empty()) q(d.ic, d.ic) = sys.h();
    const auto nu = state.part.uncollapsed.size();
    std::vector<Matrix> hinv_b(nu);
    for (std::size_t u = 0; u < nu; ++u) {
        const Index k = state.part.uncollapsed[u];
        Matrix lam_inv = d.lam[u].llt().solve(Matrix::Identity(d.lam[u].rows(), d.lam[u].cols()));
        q(d.iu[u], d.iu[u]) = lam_inv;
        if (!sys.empty()) {
            const Matrix& b = state.law.b[static_cast<std::size_t>(k)];
            q(d.ic, d.iu[u]) = b;
            q(d.iu[u], d.ic) = b.transpose();
            hinv_b[u] = -state.law.a[static_cast<std::size_t>(k)];  // H^{-1} B_k
        }
    }
    if (!sys.empty()) {
        for (std::size_t u = 0; u < nu; ++u)
            for (std::size_t v = 0; v < nu; ++v) {
                const Matrix& bu = state.law.b[static_cast<std::size_t>(state.part.uncollapsed[u])];
                Matrix add = bu.transpose() * hinv_b[v];
                Matrix cur = q(d.iu[u], d.iu[v]);
                q(d.iu[u], d.iu[v]) = cur + add;
            }
    }
    return q;
}

}  // namespace pfvi
