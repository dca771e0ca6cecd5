#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <utility>

#include <Eigen/Dense>

#include "errors.hpp"

namespace clex {

/// Symmetric d x d matrix (d <= 3) stored as d(d+1)/2 packed upper-triangle
/// entries, so symmetry holds by construction.
class SymMatrix
{
  public:
    SymMatrix() = default;
    explicit SymMatrix(int dim) : dim_(dim)
    {
        if (dim < 1 || dim > 3)
            throw ShapeError("SymMatrix: dimension must be 1..3");
    }

    static SymMatrix isotropic(int dim, double a)
    {
        SymMatrix m(dim);
        for (int i = 0; i < dim; ++i)
            m(i, i) = a;
        return m;
    }

    static SymMatrix zero(int dim) { return SymMatrix(dim); }

    int dim() const noexcept { return dim_; }
    static constexpr int packed_size(int dim) noexcept { return dim * (dim + 1) / 2; }

    double& operator()(int i, int j) noexcept { return v_[slot(i, j)]; }
    double operator()(int i, int j) const noexcept { return v_[slot(i, j)]; }

    std::span<const double> packed() const noexcept { return {v_.data(), static_cast<std::size_t>(packed_size(dim_))}; }

    SymMatrix operator+(const SymMatrix& o) const { return combine(o, 1.0); }
    SymMatrix operator-(const SymMatrix& o) const { return combine(o, -1.0); }

    SymMatrix scaled(double s) const
    {
        SymMatrix r = *this;
        for (auto& x : r.v_)
            x *= s;
        return r;
    }

    double max_abs() const noexcept
    {
        double m = 0.0;
        for (int i = 0; i < packed_size(dim_); ++i)
            m = std::max(m, std::abs(v_[i]));
        return m;
    }

    bool is_zero() const noexcept { return max_abs() == 0.0; }

    /// e . M e
    double quadratic(const std::array<double, 3>& e) const noexcept
    {
        double s = 0.0;
        for (int i = 0; i < dim_; ++i)
            for (int j = 0; j < dim_; ++j)
                s += e[i] * (*this)(i, j) * e[j];
        return s;
    }

    /// Smallest and largest eigenvalues.
    std::pair<double, double> eigen_bounds() const
    {
        Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
        for (int i = 0; i < dim_; ++i)
            for (int j = 0; j < dim_; ++j)
                m(i, j) = (*this)(i, j);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.topLeftCorner(dim_, dim_));
        const auto& ev = es.eigenvalues();
        return {ev.minCoeff(), ev.maxCoeff()};
    }

    friend bool operator==(const SymMatrix& a, const SymMatrix& b)
    {
        if (a.dim_ != b.dim_)
            return false;
        for (int i = 0; i < packed_size(a.dim_); ++i)
            if (a.v_[i] != b.v_[i])
                return false;
        return true;
    }

  private:
    int slot(int i, int j) const noexcept
    {
        if (i > j)
            std::swap(i, j);
        return i * dim_ - i * (i - 1) / 2 + (j - i);
    }

    SymMatrix combine(const SymMatrix& o, double s) const
    {
        if (o.dim_ != dim_)
            throw ShapeError("SymMatrix: dimension mismatch");
        SymMatrix r(dim_);
        for (int i = 0; i < 6; ++i)
            r.v_[i] = v_[i] + s * o.v_[i];
        return r;
    }

    int dim_ = 1;
    std::array<double, 6> v_{};
};

} // namespace clex
