#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <tuple>
#include <vector>

#include <fftw3.h>

#include "grid.hpp"

namespace clex {

namespace detail {

/// FFTW plans are created once per (dimension, n) under a global lock; the
/// planner is not thread safe, execution through the new-array interface is.
struct FftPlans
{
    fftw_plan forward = nullptr;
    fftw_plan backward = nullptr;
};

inline const FftPlans& fft_plans(int dim, long n)
{
    static std::mutex mtx;
    static std::map<std::pair<int, long>, FftPlans> plans;
    std::lock_guard lock(mtx);
    auto key = std::make_pair(dim, n);
    auto it = plans.find(key);
    if (it != plans.end())
        return it->second;
    int dims[3] = {static_cast<int>(n), static_cast<int>(n), static_cast<int>(n)};
    std::size_t real_size = 1;
    for (int k = 0; k < dim; ++k)
        real_size *= static_cast<std::size_t>(n);
    const std::size_t complex_size = real_size / static_cast<std::size_t>(n) * static_cast<std::size_t>(n / 2 + 1);
    double* in = fftw_alloc_real(real_size);
    fftw_complex* out = fftw_alloc_complex(complex_size);
    FftPlans p;
    p.forward = fftw_plan_dft_r2c(dim, dims, in, out, FFTW_ESTIMATE);
    p.backward = fftw_plan_dft_c2r(dim, dims, out, in, FFTW_ESTIMATE);
    fftw_free(in);
    fftw_free(out);
    return plans.emplace(key, p).first->second;
}

struct FftwFree
{
    void operator()(void* p) const noexcept { fftw_free(p); }
};

} // namespace detail

/// Exact inverse of the constant-coefficient massive operator
/// (1/T) u - s * Laplacian_h u on the periodic grid, applied by FFT.
///
/// For a face-coefficient field with values in [a_min, a_max] and
/// s = sqrt(a_min * a_max), the preconditioned operator has condition number
/// at most a_max / a_min, independent of the grid and of T.
class SpectralPreconditioner
{
  public:
    SpectralPreconditioner(const Grid& grid, double inv_T, double s)
      : dim_(grid.dim()), n_(grid.n), real_size_(grid.cells()),
        complex_size_(grid.cells() / static_cast<std::size_t>(grid.n) * static_cast<std::size_t>(grid.n / 2 + 1)),
        plans_(detail::fft_plans(grid.dim(), grid.n)), in_(fftw_alloc_real(real_size_)),
        out_(reinterpret_cast<fftw_complex*>(fftw_alloc_complex(complex_size_))), symbol_(complex_size_)
    {
        const double h = grid.spacing();
        std::vector<double> mode(static_cast<std::size_t>(n_));
        for (long m = 0; m < n_; ++m) {
            const double sn = std::sin(M_PI * static_cast<double>(m) / static_cast<double>(n_));
            mode[m] = 4.0 * sn * sn / (h * h);
        }
        const long half = n_ / 2 + 1;
        const double norm = static_cast<double>(real_size_);
        for (std::size_t idx = 0; idx < complex_size_; ++idx) {
            // r2c layout: last dimension has n/2+1 entries
            std::size_t rem = idx;
            double lap = mode[rem % static_cast<std::size_t>(half)];
            rem /= static_cast<std::size_t>(half);
            for (int k = 0; k < dim_ - 1; ++k) {
                lap += mode[rem % static_cast<std::size_t>(n_)];
                rem /= static_cast<std::size_t>(n_);
            }
            symbol_[idx] = 1.0 / ((inv_T + s * lap) * norm);
        }
    }

    SpectralPreconditioner(const SpectralPreconditioner&) = delete;
    SpectralPreconditioner& operator=(const SpectralPreconditioner&) = delete;

    void apply(std::span<const double> r, std::span<double> z)
    {
        std::copy(r.begin(), r.end(), in_.get());
        fftw_execute_dft_r2c(plans_.forward, in_.get(), out_.get());
        for (std::size_t i = 0; i < complex_size_; ++i) {
            out_.get()[i][0] *= symbol_[i];
            out_.get()[i][1] *= symbol_[i];
        }
        fftw_execute_dft_c2r(plans_.backward, out_.get(), in_.get());
        std::copy(in_.get(), in_.get() + real_size_, z.begin());
    }

  private:
    int dim_;
    long n_;
    std::size_t real_size_;
    std::size_t complex_size_;
    const detail::FftPlans& plans_;
    std::unique_ptr<double, detail::FftwFree> in_;
    std::unique_ptr<fftw_complex, detail::FftwFree> out_;
    std::vector<double> symbol_;
};

} // namespace clex
