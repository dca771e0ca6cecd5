#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include <boost/math/distributions/normal.hpp>

namespace clex {

/// Pairwise summation with a fixed tree shape (split at the midpoint), so the
/// result depends only on the order of the input, not on how it was produced.
inline double pairwise_sum(std::span<const double> v)
{
    if (v.empty())
        return 0.0;
    if (v.size() <= 8) {
        double s = 0.0;
        for (double x : v)
            s += x;
        return s;
    }
    const std::size_t half = v.size() / 2;
    return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

/// Monte Carlo estimate: mean and standard error (sample std / sqrt(N)).
struct Estimate
{
    double mean = 0.0;
    double stderr_ = 0.0;
    std::size_t samples = 0;

    double ci95() const { return 1.96 * stderr_; }

    /// Two-sided normal half-width at the given confidence level.
    double half_width(double confidence) const
    {
        const boost::math::normal_distribution<double> z;
        return boost::math::quantile(z, 0.5 + 0.5 * confidence) * stderr_;
    }
};

inline Estimate estimate_from_samples(std::span<const double> xs)
{
    Estimate e;
    e.samples = xs.size();
    if (xs.empty()) {
        e.mean = std::numeric_limits<double>::quiet_NaN();
        return e;
    }
    const double n = static_cast<double>(xs.size());
    e.mean = pairwise_sum(xs) / n;
    if (xs.size() < 2)
        return e;
    std::vector<double> dev(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
        dev[i] = (xs[i] - e.mean) * (xs[i] - e.mean);
    const double var = pairwise_sum(dev) / (n - 1.0);
    e.stderr_ = std::sqrt(var / n);
    return e;
}

inline double sample_variance(std::span<const double> xs)
{
    if (xs.size() < 2)
        return 0.0;
    const double n = static_cast<double>(xs.size());
    const double m = pairwise_sum(xs) / n;
    std::vector<double> dev(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
        dev[i] = (xs[i] - m) * (xs[i] - m);
    return pairwise_sum(dev) / (n - 1.0);
}

struct LinearFit
{
    double slope = 0.0;
    double intercept = 0.0;
    double slope_stderr = 0.0;
    std::size_t points = 0;
};

/// Ordinary least squares y = intercept + slope * x.
inline LinearFit fit_line(std::span<const double> x, std::span<const double> y)
{
    LinearFit f;
    f.points = x.size();
    const std::size_t n = x.size();
    if (n < 2)
        return f;
    double sx = 0, sy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sx += x[i];
        sy += y[i];
    }
    const double mx = sx / n, my = sy / n;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx == 0.0)
        return f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    if (n > 2) {
        double rss = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double r = y[i] - f.intercept - f.slope * x[i];
            rss += r * r;
        }
        f.slope_stderr = std::sqrt(rss / (n - 2) / sxx);
    }
    return f;
}

inline double factorial(int n)
{
    double f = 1.0;
    for (int i = 2; i <= n; ++i)
        f *= i;
    return f;
}

inline double binomial(long n, long k)
{
    if (k < 0 || k > n)
        return 0.0;
    double r = 1.0;
    for (long i = 1; i <= k; ++i)
        r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
    return r;
}

} // namespace clex
