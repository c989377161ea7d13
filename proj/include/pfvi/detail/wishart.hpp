#pragma once

#include <random>

namespace pfvi {

template <class Engine>
Matrix sample_inverse_wishart(double df, const Matrix& scale, Engine& rng) {
    const Index d = scale.rows();
    // W ~ Wishart(df, scale^{-1}) and Sigma = W^{-1}
    const Matrix scale_inv = scale.llt().solve(Matrix::Identity(d, d));
    const Matrix l = scale_inv.llt().matrixL();
    Matrix a = Matrix::Zero(d, d);
    std::normal_distribution<double> norm(0.0, 1.0);
    for (Index i = 0; i < d; ++i) {
        std::gamma_distribution<double> chi2((df - static_cast<double>(i)) / 2.0, 2.0);
        a(i, i) = std::sqrt(chi2(rng));
        for (Index j = 0; j < i; ++j) a(i, j) = norm(rng);
    }
    const Matrix la = l * a;
    const Matrix w = la * la.transpose();
    return w.llt().solve(Matrix::Identity(d, d));
}

}  // namespace pfvi
