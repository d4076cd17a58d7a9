#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

namespace latcomp::testing {

// Dense covariance of the circulant prior on an n x n grid, built from the
// eigenvalues 1 / (1 + beta |k|^2) with an explicit cosine sum (no FFT).
inline Eigen::MatrixXd dense_prior_covariance(int n, double beta) {
  const int N = n * n;
  Eigen::MatrixXd sigma(N, N);
  auto wrap = [n](int k) { return k > n / 2 ? k - n : k; };
  for (int p = 0; p < N; ++p) {
    for (int q = 0; q < N; ++q) {
      const int dy = p / n - q / n;
      const int dx = p % n - q % n;
      double s = 0.0;
      for (int ky = 0; ky < n; ++ky) {
        for (int kx = 0; kx < n; ++kx) {
          const double k2 = wrap(ky) * wrap(ky) + wrap(kx) * wrap(kx);
          s += std::cos(2.0 * std::numbers::pi * (ky * dy + kx * dx) / n) / (1.0 + beta * k2);
        }
      }
      sigma(p, q) = s / N;
    }
  }
  return sigma;
}

// E|X| for X ~ N(mu, s^2).
inline double folded_normal_mean(double mu, double s) {
  if (s <= 0.0) return std::abs(mu);
  return s * std::sqrt(2.0 / std::numbers::pi) * std::exp(-mu * mu / (2 * s * s)) +
         mu * std::erf(mu / (s * std::numbers::sqrt2));
}

}  // namespace latcomp::testing
