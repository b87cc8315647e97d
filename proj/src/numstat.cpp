#include "urbansense/numstat.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "urbansense/error.hpp"

namespace urbansense::numstat {

namespace {

void require(bool ok, const char* what) {
    if (!ok) throw Error(ErrorKind::Domain, what);
}

// Continued fraction for I_x(a, b), modified Lentz. `y` is 1 - x, passed separately so
// callers near x = 1 keep their precision.
double beta_continued_fraction(double a, double b, double x) {
    constexpr double kTiny = 1e-300;
    constexpr double kEps = 1e-16;
    constexpr int kMaxIter = 10000;

    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) return h;
    }
    throw Error(ErrorKind::Domain, "incomplete beta: continued fraction did not converge");
}

double incomplete_beta(double a, double b, double x, double y) {
    if (x <= 0.0) return 0.0;
    if (y <= 0.0) return 1.0;
    const double log_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log(y);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return std::clamp(front * beta_continued_fraction(a, b, x) / a, 0.0, 1.0);
    return std::clamp(1.0 - front * beta_continued_fraction(b, a, y) / b, 0.0, 1.0);
}

}  // namespace

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size())
        throw Error(ErrorKind::Domain, "cosine_similarity: dim mismatch " + std::to_string(u.size()) +
                                           " vs " + std::to_string(v.size()));
    double dot = 0.0, uu = 0.0, vv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        uu += u[i] * u[i];
        vv += v[i] * v[i];
    }
    require(uu > 0.0 && vv > 0.0, "cosine_similarity: zero vector");
    return std::clamp(dot / (std::sqrt(uu) * std::sqrt(vv)), -1.0, 1.0);
}

double cosine_similarity(const EmbeddingVector& u, const EmbeddingVector& v) {
    return cosine_similarity(u.values(), v.values());
}

AurocCounts auroc_counts(std::span<const double> pos, std::span<const double> neg) {
    require(!pos.empty() && !neg.empty(), "auroc: both sides must be non-empty");
    struct Item {
        double value;
        bool positive;
    };
    std::vector<Item> items;
    items.reserve(pos.size() + neg.size());
    for (double v : pos) items.push_back({v, true});
    for (double v : neg) items.push_back({v, false});
    std::sort(items.begin(), items.end(), [](const Item& l, const Item& r) { return l.value < r.value; });

    // Rank sums are kept doubled so tied midranks stay integral.
    long long doubled_rank_sum = 0;
    for (std::size_t i = 0; i < items.size();) {
        std::size_t j = i;
        while (j < items.size() && items[j].value == items[i].value) ++j;
        const long long doubled_midrank = static_cast<long long>(i + 1 + j);  // 2 * (i+1 + j) / 2
        for (std::size_t k = i; k < j; ++k)
            if (items[k].positive) doubled_rank_sum += doubled_midrank;
        i = j;
    }
    const auto np = static_cast<long long>(pos.size());
    const auto nn = static_cast<long long>(neg.size());
    return {doubled_rank_sum - np * (np + 1), 2 * np * nn};
}

double auroc(std::span<const double> pos, std::span<const double> neg) {
    const auto [doubled_u, doubled_pairs] = auroc_counts(pos, neg);
    // The smaller of U/N and 1 - U/N is rounded to a multiple of 2^-53, so 1 minus it is
    // exact and swapping the sides gives exactly 1 - auroc in both directions.
    const bool upper = 2 * doubled_u > doubled_pairs;
    const auto smaller = static_cast<unsigned __int128>(upper ? doubled_pairs - doubled_u : doubled_u);
    const auto den = static_cast<unsigned __int128>(doubled_pairs);
    const auto q = ((smaller << 53) + den / 2) / den;
    const double r = std::ldexp(static_cast<double>(q), -53);
    return upper ? 1.0 - r : r;
}

double regularized_incomplete_beta(double a, double b, double x) {
    require(a > 0.0 && b > 0.0, "incomplete beta: a and b must be > 0");
    require(x >= 0.0 && x <= 1.0, "incomplete beta: x must lie in [0, 1]");
    return incomplete_beta(a, b, x, 1.0 - x);
}

double student_t_two_sided_p(double t, double df) {
    require(df > 0.0, "student t: df must be > 0");
    if (std::isnan(t)) throw Error(ErrorKind::Domain, "student t: t is NaN");
    if (std::isinf(t)) return 0.0;
    if (t == 0.0) return 1.0;
    const double t2 = t * t;
    return incomplete_beta(df / 2.0, 0.5, df / (df + t2), t2 / (df + t2));
}

double student_t_cdf(double t, double df) {
    require(df > 0.0, "student t: df must be > 0");
    if (t == 0.0) return 0.5;
    const double tail = 0.5 * student_t_two_sided_p(t, df);
    return t > 0.0 ? 1.0 - tail : tail;
}

double mean(std::span<const double> values) {
    require(!values.empty(), "mean: empty sample");
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double sample_variance(std::span<const double> values) {
    require(values.size() >= 2, "variance: needs at least 2 samples");
    const double m = mean(values);
    double ss = 0.0;
    for (double v : values) ss += (v - m) * (v - m);
    return ss / static_cast<double>(values.size() - 1);
}

TTestResult welch_t_test(std::span<const double> a, std::span<const double> b) {
    require(a.size() >= 2 && b.size() >= 2, "welch t-test: each side needs at least 2 samples");
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    const double ma = mean(a);
    const double mb = mean(b);
    const double va = sample_variance(a) / na;
    const double vb = sample_variance(b) / nb;
    const double se2 = va + vb;

    TTestResult r;
    if (se2 == 0.0) {
        r.df = na + nb - 2.0;
        if (ma == mb) {
            r.t_stat = 0.0;
            r.p_value = 1.0;
        } else {
            r.t_stat = ma > mb ? INFINITY : -INFINITY;
            r.p_value = 0.0;
            r.degenerate = true;
        }
        return r;
    }
    r.t_stat = (ma - mb) / std::sqrt(se2);
    r.df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    r.p_value = student_t_two_sided_p(r.t_stat, r.df);
    return r;
}

Histogram histogram(std::span<const double> values, std::size_t bin_count,
                    std::optional<std::pair<double, double>> range) {
    require(!values.empty(), "histogram: empty sample");
    require(bin_count >= 1, "histogram: bin_count must be >= 1");
    double lo, hi;
    if (range) {
        std::tie(lo, hi) = *range;
        require(lo <= hi, "histogram: range lo > hi");
    } else {
        const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
        lo = *mn;
        hi = *mx;
    }
    if (lo == hi) {
        lo -= 0.5;
        hi += 0.5;
    }
    Histogram h;
    h.edges.resize(bin_count + 1);
    const double width = (hi - lo) / static_cast<double>(bin_count);
    for (std::size_t i = 0; i <= bin_count; ++i) h.edges[i] = lo + width * static_cast<double>(i);
    h.edges.back() = hi;
    h.counts.assign(bin_count, 0);
    for (double v : values) {
        if (v < lo || v > hi) {
            ++h.dropped;
            continue;
        }
        auto idx = std::min(bin_count - 1, static_cast<std::size_t>((v - lo) / width));
        // Snap to the stored edges so the half-open rule holds exactly.
        while (idx > 0 && v < h.edges[idx]) --idx;
        while (idx + 1 < bin_count && v >= h.edges[idx + 1]) ++idx;
        ++h.counts[idx];
    }
    return h;
}

double quantile(std::span<const double> values, double q) {
    require(!values.empty(), "quantile: empty sample");
    require(q >= 0.0 && q <= 1.0, "quantile: q must lie in [0, 1]");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double h = static_cast<double>(sorted.size() - 1) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double silverman_bandwidth(std::span<const double> values) {
    require(values.size() >= 2, "silverman bandwidth: needs at least 2 samples; pass an explicit bandwidth");
    const double sd = std::sqrt(sample_variance(values));
    const double iqr = quantile(values, 0.75) - quantile(values, 0.25);
    double spread = std::min(sd, iqr / 1.34);
    if (spread <= 0.0) spread = sd;
    require(spread > 0.0, "silverman bandwidth is zero for constant data; pass an explicit bandwidth");
    return 0.9 * spread * std::pow(static_cast<double>(values.size()), -0.2);
}

std::vector<double> kde_gaussian(std::span<const double> values, std::span<const double> grid,
                                 std::optional<double> bandwidth) {
    require(!values.empty(), "kde: empty sample");
    if (bandwidth) require(*bandwidth > 0.0, "kde: bandwidth must be > 0");
    const double h = bandwidth ? *bandwidth : silverman_bandwidth(values);
    const double norm = 1.0 / (static_cast<double>(values.size()) * h * std::sqrt(2.0 * std::numbers::pi));
    std::vector<double> density;
    density.reserve(grid.size());
    for (double g : grid) {
        double sum = 0.0;
        for (double x : values) {
            const double z = (g - x) / h;
            sum += std::exp(-0.5 * z * z);
        }
        density.push_back(sum * norm);
    }
    return density;
}

BoxStats boxplot_stats(std::span<const double> values) {
    require(!values.empty(), "boxplot: empty sample");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    BoxStats s;
    s.min = sorted.front();
    s.max = sorted.back();
    s.q1 = quantile(sorted, 0.25);
    s.median = quantile(sorted, 0.5);
    s.q3 = quantile(sorted, 0.75);
    const double iqr = s.q3 - s.q1;
    const double fence_lo = s.q1 - 1.5 * iqr;
    const double fence_hi = s.q3 + 1.5 * iqr;
    s.whisker_lo = s.q1;
    s.whisker_hi = s.q3;
    for (double v : sorted) {
        if (v < fence_lo || v > fence_hi) {
            s.outliers.push_back(v);
            continue;
        }
        s.whisker_lo = std::min(s.whisker_lo, v);
        s.whisker_hi = std::max(s.whisker_hi, v);
    }
    return s;
}

DistributionSummary summarize(std::span<const double> values, std::size_t bin_count,
                              std::pair<double, double> range, std::size_t grid_points) {
    DistributionSummary out;
    out.histogram = histogram(values, bin_count, range);
    out.box = boxplot_stats(values);
    require(grid_points >= 2, "summarize: need at least 2 grid points");
    auto [lo, hi] = range;
    if (lo == hi) {
        lo -= 0.5;
        hi += 0.5;
    }
    out.kde_grid.resize(grid_points);
    for (std::size_t i = 0; i < grid_points; ++i)
        out.kde_grid[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(grid_points - 1);
    try {
        out.bandwidth = silverman_bandwidth(values);
        out.kde_density = kde_gaussian(values, out.kde_grid, out.bandwidth);
    } catch (const Error&) {
        out.bandwidth = 0.0;
        out.kde_density.clear();
    }
    return out;
}

}  // namespace urbansense::numstat
