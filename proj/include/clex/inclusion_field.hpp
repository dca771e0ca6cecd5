#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "grid.hpp"
#include "index_set.hpp"
#include "point_process.hpp"
#include "sym_matrix.hpp"

namespace clex {

/// Radius of every inclusion.
inline constexpr double inclusion_radius = 1.0;

/// Per-cell boolean occupancy on a grid.
struct Mask
{
    Grid grid;
    std::vector<std::uint8_t> occupied;

    Mask() = default;
    explicit Mask(const Grid& g) : grid(g), occupied(g.cells(), 0) {}

    std::size_t count() const
    {
        std::size_t c = 0;
        for (auto v : occupied)
            c += v;
        return c;
    }

    bool operator[](std::size_t cell) const { return occupied[cell] != 0; }

    Mask& operator|=(const Mask& o)
    {
        check(o);
        for (std::size_t i = 0; i < occupied.size(); ++i)
            occupied[i] = occupied[i] | o.occupied[i];
        return *this;
    }

    Mask& operator&=(const Mask& o)
    {
        check(o);
        for (std::size_t i = 0; i < occupied.size(); ++i)
            occupied[i] = occupied[i] & o.occupied[i];
        return *this;
    }

    /// Set difference.
    Mask& operator-=(const Mask& o)
    {
        check(o);
        for (std::size_t i = 0; i < occupied.size(); ++i)
            occupied[i] = occupied[i] & static_cast<std::uint8_t>(!o.occupied[i]);
        return *this;
    }

    friend bool operator==(const Mask& a, const Mask& b) { return a.grid == b.grid && a.occupied == b.occupied; }

  private:
    void check(const Mask& o) const
    {
        if (!(o.grid == grid))
            throw ShapeError("Mask: grid mismatch");
    }
};

/// The two phases of the medium: A1 outside the inclusions, A2 inside.
struct MaterialPair
{
    SymMatrix a1 = SymMatrix::isotropic(1, 1.0);
    SymMatrix a2 = SymMatrix::isotropic(1, 4.0);
    double alpha = 1.0;
    double beta = 4.0;
    /// Optional deterministic periodic field replacing the constant a1.
    std::function<SymMatrix(const Vec&)> a1_field;

    static MaterialPair isotropic(int dim, double a1, double a2)
    {
        MaterialPair m;
        m.a1 = SymMatrix::isotropic(dim, a1);
        m.a2 = SymMatrix::isotropic(dim, a2);
        m.alpha = std::min(a1, a2);
        m.beta = std::max(a1, a2);
        return m;
    }

    int dim() const noexcept { return a1.dim(); }

    void check_matrix(const SymMatrix& m, const char* what) const
    {
        const auto [lo, hi] = m.eigen_bounds();
        if (lo < alpha * (1 - 1e-12) || hi > beta * (1 + 1e-12))
            throw MaterialError(std::string(what) + ": eigenvalues outside [alpha, beta]");
    }

    void validate() const
    {
        if (!(alpha > 0.0) || !(beta >= alpha))
            throw MaterialError("MaterialPair: need 0 < alpha <= beta");
        if (a1.dim() != a2.dim())
            throw MaterialError("MaterialPair: A1 and A2 dimension mismatch");
        check_matrix(a1, "A1");
        check_matrix(a2, "A2");
    }

    SymMatrix a1_at(const Vec& x) const { return a1_field ? a1_field(x) : a1; }

    bool zero_contrast() const { return !a1_field && a1 == a2; }

    /// Checkerboard A1 with unit cells of side `period`, alternating a_lo / a_hi.
    static std::function<SymMatrix(const Vec&)> checkerboard(int dim, double a_lo, double a_hi, double period)
    {
        return [=](const Vec& x) {
            long parity = 0;
            for (int k = 0; k < dim; ++k)
                parity += static_cast<long>(std::floor(x[k] / period));
            return SymMatrix::isotropic(dim, (parity % 2 == 0) ? a_lo : a_hi);
        };
    }
};

/// Per-cell symmetric matrix field on a grid.
struct CoefficientField
{
    Grid grid;
    std::vector<SymMatrix> values;

    CoefficientField() = default;
    CoefficientField(const Grid& g, const SymMatrix& fill) : grid(g), values(g.cells(), fill) {}

    const SymMatrix& operator[](std::size_t cell) const { return values[cell]; }
    SymMatrix& operator[](std::size_t cell) { return values[cell]; }

    double max_abs_difference(const CoefficientField& o) const
    {
        if (!(o.grid == grid))
            throw ShapeError("CoefficientField: grid mismatch");
        double m = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i)
            m = std::max(m, (values[i] - o.values[i]).max_abs());
        return m;
    }
};

inline CoefficientField zero_field(const Grid& g) { return CoefficientField(g, SymMatrix::zero(g.dim())); }

/// Cells of the unit ball J_n = B(x_n).
inline std::vector<CellIndex> ball_cells(const PointCloud& cloud, Label label, const Grid& grid)
{
    return cells_within(grid, cloud.at(label).x, inclusion_radius);
}

inline Mask raster_ball(const PointCloud& cloud, Label label, const Grid& grid)
{
    Mask m(grid);
    for (CellIndex c : ball_cells(cloud, label, grid))
        m.occupied[c] = 1;
    return m;
}

enum class SetMode {
    union_,             ///< J^E
    intersection,       ///< J_E
    union_minus,        ///< J^E_{||F}
    intersection_minus, ///< J_{E||F}
};

inline Mask raster_union(const PointCloud& cloud, const IndexSet& e, const Grid& grid)
{
    Mask m(grid);
    for (Label l : e)
        for (CellIndex c : ball_cells(cloud, l, grid))
            m.occupied[c] = 1;
    return m;
}

inline Mask raster_set(const PointCloud& cloud, const IndexSet& e, const IndexSet& f, SetMode mode,
                       const Grid& grid)
{
    for (Label l : e)
        cloud.at(l);
    for (Label l : f)
        cloud.at(l);
    Mask m(grid);
    switch (mode) {
    case SetMode::union_:
    case SetMode::union_minus:
        m = raster_union(cloud, e, grid);
        break;
    case SetMode::intersection:
    case SetMode::intersection_minus: {
        if (e.empty())
            throw ContractError("raster_set: intersection over an empty set (use the C_empty = 0 convention)");
        m = raster_ball(cloud, e[0], grid);
        for (std::size_t i = 1; i < e.size(); ++i)
            m &= raster_ball(cloud, e[i], grid);
        break;
    }
    }
    if (mode == SetMode::union_minus || mode == SetMode::intersection_minus)
        m -= raster_union(cloud, f, grid);
    return m;
}

/// A^E = A1 + (A2 - A1) 1_{J^E}.
inline CoefficientField assemble_A(const PointCloud& cloud, const IndexSet& e, const MaterialPair& mat,
                                   const Grid& grid)
{
    mat.validate();
    const Mask m = raster_union(cloud, e, grid);
    CoefficientField a(grid, mat.a1);
    for (std::size_t c = 0; c < grid.cells(); ++c) {
        if (m[c])
            a[c] = mat.a2;
        else if (mat.a1_field) {
            a[c] = mat.a1_field(grid.center(c));
            mat.check_matrix(a[c], "A1 field");
        }
    }
    return a;
}

enum class CVariant {
    union_,             ///< C^E
    intersection,       ///< C_E
    union_minus,        ///< C^E_{||F}
    intersection_minus, ///< C_{E||F}
};

/// (A2 - A1) on the defining mask, zero elsewhere; empty E gives the zero field.
inline CoefficientField assemble_C(const PointCloud& cloud, const IndexSet& e, const IndexSet& f, CVariant variant,
                                   const MaterialPair& mat, const Grid& grid)
{
    if (e.empty())
        return zero_field(grid);
    SetMode mode = SetMode::union_;
    switch (variant) {
    case CVariant::union_: mode = SetMode::union_; break;
    case CVariant::intersection: mode = SetMode::intersection; break;
    case CVariant::union_minus: mode = SetMode::union_minus; break;
    case CVariant::intersection_minus: mode = SetMode::intersection_minus; break;
    }
    const Mask m = raster_set(cloud, e, f, mode, grid);
    CoefficientField c = zero_field(grid);
    for (std::size_t i = 0; i < grid.cells(); ++i)
        if (m[i])
            c[i] = mat.a2 - mat.a1_at(grid.center(i));
    return c;
}

struct InclusionExclusionReport
{
    double residual_union = 0.0;              ///< C^H = sum_S (-1)^{|S|+1} C_S
    double residual_union_minus = 0.0;        ///< C^H_{||G} = sum_S (-1)^{|S|+1} C_{S||G}
    double residual_intersection_minus = 0.0; ///< C_{G||H} = sum_S (-1)^{|S|} C_{S u G}
    bool checked_with_g = false;
    std::size_t subsets = 0;

    double max_residual() const
    {
        return std::max({residual_union, residual_union_minus, residual_intersection_minus});
    }
};

/// Evaluates the three subset-sum identities cell by cell.
///
/// Each side is first reduced to an integer multiplicity per cell (the
/// identities are statements about indicator functions); the reported residual
/// is |multiplicity mismatch| * |A2 - A1|, which is exactly zero when they hold.
inline InclusionExclusionReport verify_inclusion_exclusion(const PointCloud& cloud, const IndexSet& h,
                                                           const IndexSet& g, const Grid& grid,
                                                           const MaterialPair& mat)
{
    if (h.size() > 20)
        throw CombinatorialGuardError("verify_inclusion_exclusion: |H| > 20");
    const std::size_t ncell = grid.cells();
    std::vector<Mask> balls;
    for (Label l : h)
        balls.push_back(raster_ball(cloud, l, grid));
    const Mask union_h = raster_union(cloud, h, grid);
    const Mask union_g = raster_union(cloud, g, grid);
    Mask inter_g(grid);
    if (!g.empty())
        inter_g = raster_set(cloud, g, {}, SetMode::intersection, grid);

    std::vector<int> sum_u(ncell, 0), sum_um(ncell, 0), sum_im(ncell, 0);
    const std::uint64_t count = std::uint64_t{1} << h.size();
    for (std::uint64_t s = 0; s < count; ++s) {
        const int bits = __builtin_popcountll(s);
        if (bits == 0) {
            // C_empty = 0 in the union identities; the intersection identity keeps C_G.
            if (!g.empty())
                for (std::size_t c = 0; c < ncell; ++c)
                    sum_im[c] += inter_g.occupied[c];
            continue;
        }
        const int sign_odd = (bits % 2 == 1) ? 1 : -1; // (-1)^{|S|+1}
        for (std::size_t c = 0; c < ncell; ++c) {
            bool in_all = true;
            for (std::size_t i = 0; i < h.size() && in_all; ++i)
                if (s & (std::uint64_t{1} << i))
                    in_all = balls[i].occupied[c] != 0;
            if (!in_all)
                continue;
            sum_u[c] += sign_odd;
            if (!g.empty()) {
                if (!union_g.occupied[c])
                    sum_um[c] += sign_odd;
                if (inter_g.occupied[c])
                    sum_im[c] -= sign_odd; // (-1)^{|S|}
            }
        }
    }

    InclusionExclusionReport rep;
    rep.subsets = count;
    rep.checked_with_g = !g.empty();
    for (std::size_t c = 0; c < ncell; ++c) {
        const double contrast = (mat.a2 - mat.a1_at(grid.center(c))).max_abs();
        const int lhs_u = union_h.occupied[c];
        rep.residual_union = std::max(rep.residual_union, std::abs(lhs_u - sum_u[c]) * contrast);
        if (!g.empty()) {
            const int lhs_um = union_h.occupied[c] && !union_g.occupied[c];
            const int lhs_im = inter_g.occupied[c] && !union_h.occupied[c];
            rep.residual_union_minus = std::max(rep.residual_union_minus, std::abs(lhs_um - sum_um[c]) * contrast);
            rep.residual_intersection_minus =
                std::max(rep.residual_intersection_minus, std::abs(lhs_im - sum_im[c]) * contrast);
        }
    }
    return rep;
}

/// Checks that {J_{U||G\U}}_{U subset G, U nonempty} are pairwise disjoint and cover J^G.
inline bool verify_disjoint_partition(const PointCloud& cloud, const IndexSet& g, const Grid& grid)
{
    std::vector<int> cover(grid.cells(), 0);
    bool ok = true;
    for_each_subset(g, [&](const IndexSet& u) {
        if (u.empty())
            return;
        const Mask m = raster_set(cloud, u, g.minus(u), SetMode::intersection_minus, grid);
        for (std::size_t c = 0; c < grid.cells(); ++c)
            cover[c] += m.occupied[c];
    });
    const Mask all = raster_union(cloud, g, grid);
    for (std::size_t c = 0; c < grid.cells(); ++c)
        if (cover[c] != all.occupied[c])
            ok = false;
    return ok;
}

} // namespace clex
