#pragma once

#include <functional>
#include <vector>

namespace flowlab {

double mean_of(const std::vector<double>& xs);
// Population (biased) standard deviation.
double population_std(const std::vector<double>& xs);

double normal_cdf(double x, double mean = 0.0, double std = 1.0);
double normal_log_pdf(double x, double mean = 0.0, double std = 1.0);

struct KsResult {
  double statistic = 0.0;  // sup |F1 - F2|
  double p_value = 1.0;    // asymptotic Kolmogorov distribution
};

// Two-sample Kolmogorov-Smirnov test.
KsResult ks_two_sample(std::vector<double> a, std::vector<double> b);

// One-sample test against a reference CDF.
KsResult ks_one_sample(std::vector<double> samples, const std::function<double(double)>& cdf);

// Asymptotic Kolmogorov survival function Q(lambda) = 2 sum (-1)^{k-1} exp(-2 k^2 lambda^2).
double kolmogorov_q(double lambda);

}  // namespace flowlab
