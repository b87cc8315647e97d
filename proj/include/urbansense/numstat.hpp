#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "urbansense/embedding.hpp"

// Numerical kernels shared by the assessor and the report. Everything here is pure.
namespace urbansense::numstat {

/// (u.v) / (|u||v|), clamped to [-1, 1]. Throws Domain on a dim mismatch or a zero vector.
double cosine_similarity(std::span<const double> u, std::span<const double> v);
double cosine_similarity(const EmbeddingVector& u, const EmbeddingVector& v);

/// Mann-Whitney AUROC: P(pos > neg) + 0.5 P(pos == neg), computed from midranks in
/// O(n log n). Throws Domain when either side is empty.
double auroc(std::span<const double> pos, std::span<const double> neg);

/// Mann-Whitney pair counts behind auroc: doubled_u = 2*#(pos > neg) + #(pos == neg),
/// doubled_pairs = 2*|pos|*|neg|.
struct AurocCounts {
    long long doubled_u = 0;
    long long doubled_pairs = 0;
};
AurocCounts auroc_counts(std::span<const double> pos, std::span<const double> neg);

/// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction, switching to
/// 1 - I_{1-x}(b, a) when x > (a + 1) / (a + b + 2).
double regularized_incomplete_beta(double a, double b, double x);

double student_t_cdf(double t, double df);

/// Two-sided tail probability P(|T| >= |t|) for Student's t with df degrees of freedom.
double student_t_two_sided_p(double t, double df);

struct TTestResult {
    double t_stat = 0.0;
    double df = 0.0;  // Welch-Satterthwaite, generally non-integer
    double p_value = 1.0;
    bool degenerate = false;  // both variances zero with different means; p = 0 by convention
};

/// Welch's unequal-variance two-sample t-test, two-sided. Each side needs >= 2 samples.
TTestResult welch_t_test(std::span<const double> a, std::span<const double> b);

double mean(std::span<const double> values);
/// Unbiased (n - 1) sample variance.
double sample_variance(std::span<const double> values);

struct Histogram {
    std::vector<double> edges;          // bin_count + 1 entries
    std::vector<std::size_t> counts;    // bin_count entries
    std::size_t dropped = 0;            // values outside an explicit range
};

/// Equal-width bins, half-open [lo, hi) except the last which is closed. With no explicit
/// range the bins span [min, max]; a zero-width range is widened by 0.5 on both sides.
Histogram histogram(std::span<const double> values, std::size_t bin_count,
                    std::optional<std::pair<double, double>> range = std::nullopt);

/// Silverman's rule of thumb 0.9 min(sd, IQR / 1.34) n^(-1/5). When IQR is zero but the
/// data are not constant, falls back to sd. Constant data throw Domain.
double silverman_bandwidth(std::span<const double> values);

std::vector<double> kde_gaussian(std::span<const double> values, std::span<const double> grid,
                                 std::optional<double> bandwidth = std::nullopt);

/// Linear-interpolation quantile (Hyndman-Fan type 7): h = (n - 1) q.
double quantile(std::span<const double> values, double q);

struct BoxStats {
    double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
    double whisker_lo = 0, whisker_hi = 0;
    std::vector<double> outliers;  // ascending
};

/// Tukey boxplot: whiskers reach the furthest data points within 1.5 IQR of the quartiles.
BoxStats boxplot_stats(std::span<const double> values);

struct DistributionSummary {
    Histogram histogram;
    std::vector<double> kde_grid;
    std::vector<double> kde_density;  // empty when the bandwidth is undefined (constant data)
    double bandwidth = 0.0;
    BoxStats box;
};

DistributionSummary summarize(std::span<const double> values, std::size_t bin_count,
                              std::pair<double, double> range, std::size_t grid_points);

}  // namespace urbansense::numstat
