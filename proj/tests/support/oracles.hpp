#pragma once

// Reference implementations used only by tests. They favour transparency over
// speed and share no code with the library.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<long double>>;

inline long double matern52(long double sf2, const std::vector<double>& ls, const std::vector<double>& a,
                            const std::vector<double>& b) {
  long double r2 = 0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const long double d = (static_cast<long double>(a[j]) - b[j]) / ls[j];
    r2 += d * d;
  }
  const long double r = std::sqrt(r2);
  const long double s5 = std::sqrt(5.0L);
  return sf2 * (1 + s5 * r + 5 * r2 / 3) * std::exp(-s5 * r);
}

// Gauss-Jordan elimination with partial pivoting.
inline Mat inverse(Mat a) {
  const std::size_t n = a.size();
  Mat inv(n, std::vector<long double>(n, 0));
  for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::fabs(a[r][c]) > std::fabs(a[p][c])) p = r;
    if (a[p][c] == 0) throw std::runtime_error("singular");
    std::swap(a[p], a[c]);
    std::swap(inv[p], inv[c]);
    const long double d = a[c][c];
    for (std::size_t k = 0; k < n; ++k) {
      a[c][k] /= d;
      inv[c][k] /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const long double f = a[r][c];
      if (f == 0) continue;
      for (std::size_t k = 0; k < n; ++k) {
        a[r][k] -= f * a[c][k];
        inv[r][k] -= f * inv[c][k];
      }
    }
  }
  return inv;
}

struct GpResult {
  std::vector<double> mean, var;
};

inline GpResult gp_posterior(long double sf2, const std::vector<double>& ls, const std::vector<std::vector<double>>& X,
                             const std::vector<double>& t, const std::vector<double>& v,
                             const std::vector<std::vector<double>>& Q) {
  const std::size_t n = X.size();
  Mat K(n, std::vector<long double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) K[i][j] = matern52(sf2, ls, X[i], X[j]) + (i == j ? v[i] : 0.0L);
  const Mat Ki = inverse(K);
  GpResult out;
  for (const auto& q : Q) {
    std::vector<long double> k(n);
    for (std::size_t i = 0; i < n; ++i) k[i] = matern52(sf2, ls, q, X[i]);
    long double mean = 0, quad = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        mean += k[i] * Ki[i][j] * t[j];
        quad += k[i] * Ki[i][j] * k[j];
      }
    out.mean.push_back(static_cast<double>(mean));
    out.var.push_back(static_cast<double>(std::max(0.0L, sf2 - quad)));
  }
  return out;
}

// Weighted least-squares fit of a constant: minimize sum (d_i - b)^2 / v_i
// through the normal equation of the one-column design matrix.
inline double wls_constant(const std::vector<double>& d, const std::vector<double>& v) {
  long double xtwx = 0, xtwy = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const long double w = 1.0L / v[i];
    xtwx += w;
    xtwy += w * d[i];
  }
  return static_cast<double>(xtwy / xtwx);
}

// DCG over an explicit ordering with linear gain and log2(rank + 1) discount.
inline double dcg(const std::vector<double>& rel_in_order, std::size_t k) {
  long double s = 0;
  for (std::size_t r = 0; r < std::min(k, rel_in_order.size()); ++r)
    s += rel_in_order[r] / std::log2(static_cast<long double>(r + 2));
  return static_cast<double>(s);
}

}  // namespace oracle
