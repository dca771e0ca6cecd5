#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "corrector_solver.hpp"
#include "inclusion_field.hpp"

namespace clex {

/// Flat multi-channel cell field.
///
/// Binary layout (little-endian):
///   bytes 0..7   "CLEXFLD1"
///   u32 dim, u32 channels, i64 n (cells per side), f64 side
///   f64 values[cells * channels], cell-major in row-major cell order
///   (last axis fastest), channel fastest within a cell.
struct FlatField
{
    Grid grid;
    std::uint32_t channels = 1;
    std::vector<double> values;

    double at(std::size_t cell, std::uint32_t ch) const { return values[cell * channels + ch]; }
};

inline constexpr char field_magic[8] = {'C', 'L', 'E', 'X', 'F', 'L', 'D', '1'};

inline FlatField flatten(const Mask& m)
{
    FlatField f{m.grid, 1, {}};
    f.values.assign(m.occupied.begin(), m.occupied.end());
    return f;
}

/// Channels are the upper-triangle entries (0,0), (0,1), ..., (d-1,d-1).
inline FlatField flatten(const CoefficientField& a)
{
    const int d = a.grid.dim();
    FlatField f{a.grid, static_cast<std::uint32_t>(SymMatrix::packed_size(d)), {}};
    f.values.reserve(a.values.size() * f.channels);
    for (const auto& m : a.values)
        for (int i = 0; i < d; ++i)
            for (int j = i; j < d; ++j)
                f.values.push_back(m(i, j));
    return f;
}

/// Channel k holds the face quantity on the +k face of each cell.
inline FlatField flatten(const FaceField& u, const Grid& g)
{
    if (u.cells() != g.cells() || u.dim != g.dim())
        throw ShapeError("flatten: face field does not match the grid");
    FlatField f{g, static_cast<std::uint32_t>(u.dim), {}};
    f.values.reserve(g.cells() * f.channels);
    for (std::size_t c = 0; c < g.cells(); ++c)
        for (int k = 0; k < u.dim; ++k)
            f.values.push_back(u.comp[k][c]);
    return f;
}

inline Mask to_mask(const FlatField& f)
{
    if (f.channels != 1)
        throw ShapeError("to_mask: expected one channel");
    Mask m(f.grid);
    for (std::size_t c = 0; c < m.occupied.size(); ++c) {
        if (f.values[c] != 0.0 && f.values[c] != 1.0)
            throw ShapeError("to_mask: values must be 0 or 1");
        m.occupied[c] = f.values[c] != 0.0;
    }
    return m;
}

inline CoefficientField to_coefficients(const FlatField& f)
{
    const int d = f.grid.dim();
    if (f.channels != static_cast<std::uint32_t>(SymMatrix::packed_size(d)))
        throw ShapeError("to_coefficients: channel count differs from d(d+1)/2");
    CoefficientField a(f.grid, SymMatrix::zero(d));
    std::size_t q = 0;
    for (auto& m : a.values)
        for (int i = 0; i < d; ++i)
            for (int j = i; j < d; ++j)
                m(i, j) = f.values[q++];
    return a;
}

namespace detail {

template <class T>
void put(std::ostream& os, T v)
{
    static_assert(std::endian::native == std::endian::little, "little-endian host required");
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is)
{
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
        throw ShapeError("read_field: truncated header");
    return v;
}

} // namespace detail

inline void write_field(std::ostream& os, const FlatField& f)
{
    if (f.values.size() != f.grid.cells() * f.channels)
        throw ShapeError("write_field: value count does not match grid and channels");
    os.write(field_magic, sizeof field_magic);
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(f.grid.dim()));
    detail::put<std::uint32_t>(os, f.channels);
    detail::put<std::int64_t>(os, f.grid.n);
    detail::put<double>(os, f.grid.box.side);
    os.write(reinterpret_cast<const char*>(f.values.data()), static_cast<std::streamsize>(f.values.size() * sizeof(double)));
}

inline FlatField read_field(std::istream& is)
{
    char magic[8];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, field_magic, sizeof magic) != 0)
        throw ShapeError("read_field: bad magic");
    const auto dim = detail::get<std::uint32_t>(is);
    const auto channels = detail::get<std::uint32_t>(is);
    const auto n = detail::get<std::int64_t>(is);
    const auto side = detail::get<double>(is);
    if (dim < 1 || dim > 3 || channels < 1)
        throw ShapeError("read_field: bad header");
    FlatField f{Grid(Box{static_cast<int>(dim), side, true}, n), channels, {}};
    f.values.resize(f.grid.cells() * channels);
    if (!is.read(reinterpret_cast<char*>(f.values.data()), static_cast<std::streamsize>(f.values.size() * sizeof(double))))
        throw ShapeError("read_field: truncated data");
    return f;
}

/// CSV export for small grids: i0[,i1[,i2]],c0,c1,... one row per cell.
inline void write_field_csv(std::ostream& os, const FlatField& f, std::size_t max_cells = 1u << 20)
{
    if (f.grid.cells() > max_cells)
        throw ShapeError("write_field_csv: grid too large for CSV export");
    const int d = f.grid.dim();
    for (int k = 0; k < d; ++k)
        os << (k ? "," : "") << 'i' << k;
    for (std::uint32_t c = 0; c < f.channels; ++c)
        os << ",c" << c;
    os << '\n';
    for (std::size_t cell = 0; cell < f.grid.cells(); ++cell) {
        const auto ix = f.grid.coords(cell);
        for (int k = 0; k < d; ++k)
            os << (k ? "," : "") << ix[k];
        for (std::uint32_t c = 0; c < f.channels; ++c)
            os << ',' << format_g17(f.at(cell, c));
        os << '\n';
    }
}

} // namespace clex
