#include "pipetune/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

#include "pipetune/error.hpp"

namespace pipetune {

namespace {

void check_lengths(std::span<const double> a, std::span<const double> b, std::size_t min) {
  if (a.size() != b.size()) throw InvalidArgument("score vectors differ in length");
  if (a.size() < min) throw InvalidArgument("score vectors are too short");
}

// Doubled mid-ranks as integers: position sums stay exact.
std::vector<std::int64_t> doubled_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<std::int64_t> r(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[idx[j + 1]] == values[idx[i]]) ++j;
    // Positions i+1 .. j+1 averaged, times two.
    const auto twice = static_cast<std::int64_t>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = twice;
    i = j + 1;
  }
  return r;
}

std::uint64_t tied_pairs(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::uint64_t pairs = 0;
  for (std::size_t i = 0; i < v.size();) {
    std::size_t j = i;
    while (j < v.size() && v[j] == v[i]) ++j;
    const std::uint64_t t = j - i;
    pairs += t * (t - 1) / 2;
    i = j;
  }
  return pairs;
}

std::uint64_t count_inversions(std::vector<double>& a, std::vector<double>& buf, std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::uint64_t inv = count_inversions(a, buf, lo, mid) + count_inversions(a, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (a[j] < a[i]) {
      inv += mid - i;
      buf[k++] = a[j++];
    } else {
      buf[k++] = a[i++];
    }
  }
  while (i < mid) buf[k++] = a[i++];
  while (j < hi) buf[k++] = a[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            a.begin() + static_cast<std::ptrdiff_t>(lo));
  return inv;
}

}  // namespace

int recall_at_k(std::span<const Configuration> ranked, const Configuration& c_opt, std::size_t k) {
  if (k < 1) throw InvalidArgument("k must be at least 1");
  const auto it = std::find(ranked.begin(), ranked.end(), c_opt);
  if (it == ranked.end()) throw NotFound("optimal configuration is not in the ranked pool");
  return static_cast<std::size_t>(it - ranked.begin()) < k ? 1 : 0;
}

double ndcg_at_k(std::span<const double> predicted, std::span<const double> truth, std::size_t k) {
  check_lengths(predicted, truth, 1);
  if (k < 1) throw InvalidArgument("k must be at least 1");
  const auto [lo_it, hi_it] = std::minmax_element(truth.begin(), truth.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return 1.0;
  const std::size_t n = truth.size();
  std::vector<double> rel(n);
  for (std::size_t i = 0; i < n; ++i) rel[i] = (truth[i] - lo) / (hi - lo);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return predicted[a] > predicted[b]; });
  std::vector<double> ideal = rel;
  std::sort(ideal.begin(), ideal.end(), std::greater<>());

  double dcg = 0.0, idcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, n); ++r) {
    const double discount = std::log2(static_cast<double>(r + 2));
    dcg += rel[order[r]] / discount;
    idcg += ideal[r] / discount;
  }
  return dcg / idcg;
}

std::optional<double> pairwise_accuracy(std::span<const double> predicted, std::span<const double> truth) {
  check_lengths(predicted, truth, 2);
  const std::size_t n = truth.size();
  const std::uint64_t all = static_cast<std::uint64_t>(n) * (n - 1) / 2;
  const std::uint64_t truth_tied = tied_pairs({truth.begin(), truth.end()});
  const std::uint64_t comparable = all - truth_tied;
  if (comparable == 0) return std::nullopt;

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (truth[a] != truth[b]) return truth[a] < truth[b];
    return predicted[a] < predicted[b];
  });
  std::vector<double> seq(n), buf(n);
  for (std::size_t i = 0; i < n; ++i) seq[i] = predicted[idx[i]];

  // Pairs tied in the prediction but not in the truth.
  std::uint64_t pred_tied = tied_pairs(seq);
  {
    std::uint64_t both = 0;
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j < n && truth[idx[j]] == truth[idx[i]] && seq[j] == seq[i]) ++j;
      const std::uint64_t t = j - i;
      both += t * (t - 1) / 2;
      i = j;
    }
    pred_tied -= both;
  }
  const std::uint64_t discordant = count_inversions(seq, buf, 0, n);
  const std::uint64_t concordant = comparable - discordant - pred_tied;
  return static_cast<double>(2 * concordant + pred_tied) / static_cast<double>(2 * comparable);
}

std::optional<double> spearman(std::span<const double> predicted, std::span<const double> truth) {
  check_lengths(predicted, truth, 2);
  const auto a = doubled_ranks(predicted);
  const auto b = doubled_ranks(truth);
  using Wide = __int128;
  Wide sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa += a[i];
    sb += b[i];
    saa += static_cast<Wide>(a[i]) * a[i];
    sbb += static_cast<Wide>(b[i]) * b[i];
    sab += static_cast<Wide>(a[i]) * b[i];
  }
  const auto n = static_cast<Wide>(a.size());
  const Wide num = n * sab - sa * sb;
  const Wide da = n * saa - sa * sa;
  const Wide db = n * sbb - sb * sb;
  if (da <= 0 || db <= 0) return std::nullopt;
  const long double r = static_cast<long double>(num) /
                        std::sqrt(static_cast<long double>(da) * static_cast<long double>(db));
  return static_cast<double>(std::clamp(r, -1.0L, 1.0L));
}

std::vector<double> mid_ranks(std::span<const double> values) {
  const auto r = doubled_ranks(values);
  std::vector<double> out(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) out[i] = static_cast<double>(r[i]) / 2.0;
  return out;
}

SignTestResult sign_test_less(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("paired samples differ in length");
  SignTestResult out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < b[i]) ++out.wins;
    else if (a[i] > b[i]) ++out.losses;
    else ++out.ties;
  }
  const std::size_t n = out.wins + out.losses;
  if (n == 0) return out;
  // Upper tail of Binomial(n, 1/2) via log-space terms.
  double p = 0.0;
  for (std::size_t k = out.wins; k <= n; ++k)
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - n * std::log(2.0));
  out.p_value = std::min(1.0, p);
  return out;
}

double trend_slope(std::span<const double> x, std::span<const double> y) {
  check_lengths(x, y, 2);
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / y.size();
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (!(sxx > 0)) throw InvalidArgument("x has no spread");
  return sxy / sxx;
}

}  // namespace pipetune
