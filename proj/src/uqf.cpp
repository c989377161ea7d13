#include "pfvi/uqf.hpp"

#include "pfvi/error.hpp"
#include "pfvi/rng.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pfvi {

namespace {

Eigen::LLT<Matrix> spd_factor(const Matrix& m, const char* what) {
    if (m.rows() != m.cols()) fail(ErrorKind::Domain, std::string(what) + " is not square");
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-8 * (1.0 + m.cwiseAbs().maxCoeff()))
        fail(ErrorKind::Domain, std::string(what) + " is not symmetric");
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() != Eigen::Success || !Matrix(llt.matrixL()).diagonal().allFinite() ||
        Matrix(llt.matrixL()).diagonal().minCoeff() <= 0.0)
        fail(ErrorKind::Domain, std::string(what) + " is not positive definite");
    return llt;
}

double max_eigenvalue(const Matrix& sym) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
    return es.eigenvalues()(es.eigenvalues().size() - 1);
}

double silverman(const Vector& x) {
    const auto n = static_cast<double>(x.size());
    const double mean = x.mean();
    const double sd = x.size() > 1 ? std::sqrt((x.array() - mean).square().sum() / (n - 1.0)) : 0.0;
    if (!(sd > 0.0)) fail(ErrorKind::Domain, "tv_accuracy: constant sample has no density");
    std::vector<double> v(x.data(), x.data() + x.size());
    auto quantile = [&](double q) {
        const double pos = q * (n - 1.0);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, v.size() - 1);
        std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(lo), v.end());
        const double a = v[lo];
        std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(hi), v.end());
        const double b = v[hi];
        return a + (pos - std::floor(pos)) * (b - a);
    };
    const double iqr = quantile(0.75) - quantile(0.25);
    double spread = sd;
    if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
    return 0.9 * spread * std::pow(n, -0.2);
}

/// Gaussian KDE evaluated on a uniform grid after linear binning.
Vector binned_kde(const Vector& x, double lo, double step, Index bins, double h) {
    Vector counts = Vector::Zero(bins);
    for (Index i = 0; i < x.size(); ++i) {
        const double pos = (x(i) - lo) / step;
        const auto j = static_cast<Index>(std::floor(pos));
        const double frac = pos - static_cast<double>(j);
        if (j >= 0 && j < bins) counts(j) += 1.0 - frac;
        if (j + 1 >= 0 && j + 1 < bins) counts(j + 1) += frac;
    }
    const double norm = 1.0 / (static_cast<double>(x.size()) * h * std::sqrt(2.0 * M_PI));
    Vector kernel(bins);
    for (Index d = 0; d < bins; ++d) {
        const double u = static_cast<double>(d) * step / h;
        kernel(d) = std::exp(-0.5 * u * u);
    }
    Vector dens = Vector::Zero(bins);
    for (Index j = 0; j < bins; ++j) {
        if (counts(j) == 0.0) continue;
        for (Index l = 0; l < bins; ++l) dens(l) += counts(j) * kernel(std::abs(l - j));
    }
    return dens * norm;
}

}  // namespace

double uqf_analytic(const Matrix& cov_pi, const Matrix& q_precision) {
    if (cov_pi.rows() != q_precision.rows())
        fail(ErrorKind::Domain, "uqf_analytic: dimension mismatch");
    spd_factor(cov_pi, "cov_pi");
    auto llt = spd_factor(q_precision, "q precision");
    const Matrix l = llt.matrixL();
    Matrix m = l.transpose() * cov_pi * l;
    m = 0.5 * (m + m.transpose());
    return 1.0 / max_eigenvalue(m);
}

Matrix sample_covariance(const Matrix& samples) {
    const Index s = samples.rows();
    if (s < 2) fail(ErrorKind::SampleSize, "sample covariance needs at least 2 draws");
    Matrix centered = samples.rowwise() - samples.colwise().mean();
    return centered.transpose() * centered / static_cast<double>(s - 1);
}

UqfEstimate uqf_split_sample(const Matrix& pi_samples, const Matrix& q_precision, int folds, Index top,
                             std::optional<std::uint64_t> shuffle_seed) {
    const Index s = pi_samples.rows();
    const Index p = pi_samples.cols();
    if (q_precision.rows() != p) fail(ErrorKind::Domain, "uqf_split_sample: dimension mismatch");
    if (folds < 2) fail(ErrorKind::Domain, "uqf_split_sample needs at least 2 folds");
    const Index k = std::min(top, p);
    if (s < static_cast<Index>(folds) * (k + 2))
        fail(ErrorKind::SampleSize, "uqf_split_sample needs at least folds*(top+2) = " +
                                        std::to_string(static_cast<Index>(folds) * (k + 2)) + " draws, got " +
                                        std::to_string(s));
    auto llt = spd_factor(q_precision, "q precision");
    const Matrix l = llt.matrixL();

    std::vector<Index> order(static_cast<std::size_t>(s));
    std::iota(order.begin(), order.end(), Index{0});
    if (shuffle_seed) {
        Rng rng(*shuffle_seed);
        std::shuffle(order.begin(), order.end(), rng);
    }

    UqfEstimate est;
    est.method = "split_sample";
    est.eigvec_count = k;
    for (int f = 0; f < folds; ++f) {
        const Index begin = s * f / folds;
        const Index end = s * (f + 1) / folds;
        Matrix held(end - begin, p);
        Matrix train(s - (end - begin), p);
        Index ih = 0, it = 0;
        for (Index r = 0; r < s; ++r) {
            const auto row = pi_samples.row(order[static_cast<std::size_t>(r)]);
            if (r >= begin && r < end) held.row(ih++) = row;
            else train.row(it++) = row;
        }
        // Directions V = L U with cov_q(V'theta) = I; U spans the top eigenvectors of L' C L.
        Matrix m = l.transpose() * sample_covariance(train) * l;
        m = 0.5 * (m + m.transpose());
        Eigen::SelfAdjointEigenSolver<Matrix> es(m);
        Matrix v = l * es.eigenvectors().rightCols(k);
        Matrix proj = held * v;
        Matrix c = sample_covariance(proj);
        c = 0.5 * (c + c.transpose());
        est.fold_values.push_back(1.0 / max_eigenvalue(c));
    }
    est.value = std::accumulate(est.fold_values.begin(), est.fold_values.end(), 0.0) /
                static_cast<double>(folds);
    return est;
}

double tv_accuracy(const Vector& a, const Vector& b) {
    if (a.size() == 0 || b.size() == 0) fail(ErrorKind::SampleSize, "tv_accuracy needs nonempty samples");
    const double ha = silverman(a);
    const double hb = silverman(b);
    const double h = std::max(ha, hb);
    const double lo = std::min(a.minCoeff(), b.minCoeff()) - 3.0 * h;
    const double hi = std::max(a.maxCoeff(), b.maxCoeff()) + 3.0 * h;
    const Index bins = 401;
    const double step = (hi - lo) / static_cast<double>(bins - 1);
    Vector fa = binned_kde(a, lo, step, bins, ha);
    Vector fb = binned_kde(b, lo, step, bins, hb);
    auto trapezoid = [&](const Vector& f) { return step * (f.sum() - 0.5 * (f(0) + f(bins - 1))); };
    fa /= trapezoid(fa);
    fb /= trapezoid(fb);
    Vector diff = (fa - fb).cwiseAbs();
    const double integral = trapezoid(diff);
    return std::clamp(1.0 - 0.5 * integral, 0.0, 1.0);
}

}  // namespace pfvi
