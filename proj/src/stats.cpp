#include "flowlab/stats.hpp"

#include <algorithm>
#include <cmath>

#include "flowlab/errors.hpp"

namespace flowlab {

double mean_of(const std::vector<double>& xs) {
  require(!xs.empty(), "E_ARG", "mean of empty collection");
  double acc = 0.0;
  for (double x : xs) acc += x;
  return acc / static_cast<double>(xs.size());
}

double population_std(const std::vector<double>& xs) {
  const double m = mean_of(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(xs.size()));
}

double normal_cdf(double x, double mean, double std) {
  return 0.5 * std::erfc(-(x - mean) / (std * std::sqrt(2.0)));
}

double normal_log_pdf(double x, double mean, double std) {
  const double z = (x - mean) / std;
  return -0.5 * z * z - std::log(std) - 0.5 * std::log(2.0 * M_PI);
}

double kolmogorov_q(double lambda) {
  if (lambda <= 0.0) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1 ? term : -term);
    if (term < 1e-12) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  require(!a.empty() && !b.empty(), "E_ARG", "ks_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());

  double d = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }

  const double ne = na * nb / (na + nb);
  KsResult r;
  r.statistic = d;
  r.p_value = kolmogorov_q(std::sqrt(ne) * d);
  return r;
}

KsResult ks_one_sample(std::vector<double> samples, const std::function<double(double)>& cdf) {
  require(!samples.empty(), "E_ARG", "ks_one_sample: empty sample");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max(d, std::max((static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n));
  }
  KsResult r;
  r.statistic = d;
  r.p_value = kolmogorov_q(std::sqrt(n) * d);
  return r;
}

}  // namespace flowlab
