#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "errors.hpp"
#include "point_process.hpp"

namespace clex {

using CellIndex = std::uint32_t;

/// Uniform periodic raster of n^d cells over a Box. Row-major: the last
/// coordinate varies fastest.
struct Grid
{
    Box box;
    long n = 2;

    Grid() = default;
    Grid(const Box& b, long cells_per_side) : box(b), n(cells_per_side) { validate(); }

    void validate() const
    {
        box.validate();
        if (n < 2)
            throw GeometryError("Grid: at least 2 cells per side required");
        if (std::pow(static_cast<double>(n), box.dim) > 4.0e9)
            throw GeometryError("Grid: too many cells");
    }

    int dim() const noexcept { return box.dim; }
    double spacing() const noexcept { return box.side / static_cast<double>(n); }
    double cell_volume() const noexcept { return std::pow(spacing(), box.dim); }

    std::size_t cells() const noexcept
    {
        std::size_t c = 1;
        for (int k = 0; k < box.dim; ++k)
            c *= static_cast<std::size_t>(n);
        return c;
    }

    /// Stride of coordinate k in the flat index.
    std::size_t stride(int k) const noexcept
    {
        std::size_t s = 1;
        for (int j = box.dim - 1; j > k; --j)
            s *= static_cast<std::size_t>(n);
        return s;
    }

    std::array<long, 3> coords(std::size_t cell) const noexcept
    {
        std::array<long, 3> c{0, 0, 0};
        for (int k = box.dim - 1; k >= 0; --k) {
            c[k] = static_cast<long>(cell % static_cast<std::size_t>(n));
            cell /= static_cast<std::size_t>(n);
        }
        return c;
    }

    std::size_t index(const std::array<long, 3>& c) const noexcept
    {
        std::size_t idx = 0;
        for (int k = 0; k < box.dim; ++k) {
            long v = c[k] % n;
            if (v < 0)
                v += n;
            idx = idx * static_cast<std::size_t>(n) + static_cast<std::size_t>(v);
        }
        return idx;
    }

    Vec center(std::size_t cell) const noexcept
    {
        const auto c = coords(cell);
        Vec x{0, 0, 0};
        for (int k = 0; k < box.dim; ++k)
            x[k] = (static_cast<double>(c[k]) + 0.5) * spacing();
        return x;
    }

    /// Periodic neighbor of `cell` shifted by `step` (+1 / -1) along axis k.
    std::size_t neighbor(std::size_t cell, int k, int step) const noexcept
    {
        const std::size_t s = stride(k);
        const long ck = static_cast<long>((cell / s) % static_cast<std::size_t>(n));
        long nk = ck + step;
        if (nk >= n)
            nk -= n;
        else if (nk < 0)
            nk += n;
        return cell + static_cast<std::size_t>(nk) * s - static_cast<std::size_t>(ck) * s;
    }

    /// At least four cells across a unit radius.
    bool production_resolution() const noexcept { return spacing() <= 0.25 + 1e-12; }

    friend bool operator==(const Grid& a, const Grid& b)
    {
        return a.box.dim == b.box.dim && a.box.side == b.box.side && a.n == b.n;
    }
};

/// Sorted list of cells whose centers lie within periodic distance `radius` of x
/// (strict inequality).
inline std::vector<CellIndex> cells_within(const Grid& g, const Vec& x, double radius)
{
    const double dx = g.spacing();
    const int d = g.dim();
    std::array<long, 3> lo{0, 0, 0}, hi{0, 0, 0};
    for (int k = 0; k < d; ++k) {
        if (2.0 * radius >= g.box.side) {
            lo[k] = 0;
            hi[k] = g.n - 1;
        } else {
            lo[k] = static_cast<long>(std::floor((x[k] - radius) / dx - 0.5));
            hi[k] = static_cast<long>(std::ceil((x[k] + radius) / dx - 0.5));
        }
    }
    const double r2 = radius * radius;
    std::vector<CellIndex> out;
    std::array<long, 3> c{0, 0, 0};
    for (c[0] = lo[0]; c[0] <= hi[0]; ++c[0])
        for (c[1] = lo[1]; c[1] <= (d > 1 ? hi[1] : 0); ++c[1])
            for (c[2] = lo[2]; c[2] <= (d > 2 ? hi[2] : 0); ++c[2]) {
                const std::size_t idx = g.index(c);
                if (g.box.distance2(g.center(idx), x) < r2)
                    out.push_back(static_cast<CellIndex>(idx));
            }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

} // namespace clex
