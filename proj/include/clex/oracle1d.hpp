#pragma once

#include <cmath>
#include <vector>

#include "errors.hpp"
#include "stats.hpp"

namespace clex::oracle1d {

/// Homogenized coefficient of a 1D Boolean model of unit-radius segments with
/// intensity mu: harmonic mean with vacancy probability exp(-2 mu).
inline double value(double mu, double alpha, double beta)
{
    if (!(alpha > 0.0 && beta > 0.0))
        throw ParameterError("oracle1d: conductivities must be positive");
    const double v = std::exp(-2.0 * mu);
    return 1.0 / (v / alpha + (1.0 - v) / beta);
}

/// Derivatives f^(j)(0), j = 0..jmax, of f(mu) = value(mu, alpha, beta).
/// f = 1/g with g = c exp(-2 mu) + 1/beta, c = 1/alpha - 1/beta; Leibniz on f g = 1.
inline std::vector<double> derivatives(int jmax, double alpha, double beta)
{
    const double c = 1.0 / alpha - 1.0 / beta;
    std::vector<double> g(jmax + 1), f(jmax + 1);
    g[0] = c + 1.0 / beta;
    for (int i = 1; i <= jmax; ++i)
        g[i] = c * std::pow(-2.0, i);
    f[0] = 1.0 / g[0];
    for (int n = 1; n <= jmax; ++n) {
        double s = 0.0;
        for (int i = 1; i <= n; ++i)
            s += binomial(n, i) * g[i] * f[n - i];
        f[n] = -s / g[0];
    }
    return f;
}

/// lambda^j f^(j)(0): the j-th Taylor coefficient in the thinning parameter p.
inline double coefficient(int j, double lambda, double alpha, double beta)
{
    return std::pow(lambda, j) * derivatives(j, alpha, beta)[j];
}

/// |f(p lambda) - sum_{j<=k} p^j/j! lambda^j f^(j)(0)|
inline double taylor_remainder(double p, int k, double lambda, double alpha, double beta)
{
    const auto f = derivatives(k, alpha, beta);
    double s = 0.0;
    for (int j = 0; j <= k; ++j)
        s += std::pow(p * lambda, j) / factorial(j) * f[j];
    return std::abs(value(p * lambda, alpha, beta) - s);
}

} // namespace clex::oracle1d
