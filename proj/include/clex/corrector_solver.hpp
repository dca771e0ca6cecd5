#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "grid.hpp"
#include "inclusion_field.hpp"
#include "spectral.hpp"
#include "stats.hpp"

namespace clex {

// ---------------------------------------------------------------------------
// Faces and stencils
// ---------------------------------------------------------------------------

/// One value per face and direction. Face (c, k) separates cell c from its
/// periodic neighbor c + e_k, so every direction has exactly `cells` faces.
struct FaceField
{
    int dim = 1;
    std::array<std::vector<double>, 3> comp;

    FaceField() = default;
    FaceField(int d, std::size_t cells, double fill = 0.0) : dim(d)
    {
        for (int k = 0; k < d; ++k)
            comp[k].assign(cells, fill);
    }

    std::size_t cells() const noexcept { return comp[0].size(); }

    double max_abs() const
    {
        double m = 0.0;
        for (int k = 0; k < dim; ++k)
            for (double v : comp[k])
                m = std::max(m, std::abs(v));
        return m;
    }

    /// Box average of sum_k u_k^2.
    double mean_square() const
    {
        double s = 0.0;
        for (int k = 0; k < dim; ++k) {
            std::vector<double> sq(comp[k].size());
            for (std::size_t i = 0; i < sq.size(); ++i)
                sq[i] = comp[k][i] * comp[k][i];
            s += pairwise_sum(sq) / static_cast<double>(sq.size());
        }
        return s;
    }

    FaceField& axpy(double a, const FaceField& x)
    {
        for (int k = 0; k < dim; ++k)
            for (std::size_t i = 0; i < comp[k].size(); ++i)
                comp[k][i] += a * x.comp[k][i];
        return *this;
    }

    double max_abs_difference(const FaceField& o) const
    {
        double m = 0.0;
        for (int k = 0; k < dim; ++k)
            for (std::size_t i = 0; i < comp[k].size(); ++i)
                m = std::max(m, std::abs(comp[k][i] - o.comp[k][i]));
        return m;
    }
};

/// Periodic neighbor tables of a grid, shared between all solves on that grid.
struct Stencil
{
    Grid grid;
    std::array<std::vector<CellIndex>, 3> plus;
    std::array<std::vector<CellIndex>, 3> minus;
};

inline std::shared_ptr<const Stencil> stencil_for(const Grid& g)
{
    static std::mutex mtx;
    static std::map<std::tuple<int, double, long>, std::shared_ptr<const Stencil>> cache;
    std::lock_guard lock(mtx);
    auto key = std::make_tuple(g.dim(), g.box.side, g.n);
    if (auto it = cache.find(key); it != cache.end())
        return it->second;
    auto s = std::make_shared<Stencil>();
    s->grid = g;
    for (int k = 0; k < g.dim(); ++k) {
        s->plus[k].resize(g.cells());
        s->minus[k].resize(g.cells());
        for (std::size_t c = 0; c < g.cells(); ++c) {
            s->plus[k][c] = static_cast<CellIndex>(g.neighbor(c, k, +1));
            s->minus[k][c] = static_cast<CellIndex>(g.neighbor(c, k, -1));
        }
    }
    cache.emplace(key, s);
    return s;
}

inline double harmonic_mean(double a, double b) { return 2.0 * a * b / (a + b); }

/// Two-point flux face coefficients: harmonic mean of the face-normal
/// diagonal entries of the two adjacent cell matrices.
inline FaceField face_coefficients(const CoefficientField& a)
{
    const Grid& g = a.grid;
    auto st = stencil_for(g);
    FaceField f(g.dim(), g.cells());
    for (int k = 0; k < g.dim(); ++k)
        for (std::size_t c = 0; c < g.cells(); ++c)
            f.comp[k][c] = harmonic_mean(a[c](k, k), a[st->plus[k][c]](k, k));
    return f;
}

// ---------------------------------------------------------------------------
// Parameters, results, diagnostics
// ---------------------------------------------------------------------------

enum class SolverMethod {
    automatic,    ///< direct tridiagonal in 1D, spectral PCG otherwise
    pcg_jacobi,
    pcg_spectral,
    direct_1d,
};

struct SolverParams
{
    double T = 1.0;
    double tolerance = 1e-10;
    long max_iterations = 0; ///< 0 -> 10 * n^d
    Vec e{1.0, 0.0, 0.0};
    SolverMethod method = SolverMethod::automatic;

    void validate(int dim) const
    {
        if (!(T > 0.0) || !std::isfinite(T))
            throw ParameterError("SolverParams: T must be positive");
        if (!(tolerance > 0.0 && tolerance < 1.0))
            throw ParameterError("SolverParams: tolerance must lie in (0,1)");
        double n2 = 0.0;
        for (int k = 0; k < dim; ++k)
            n2 += e[k] * e[k];
        for (int k = dim; k < 3; ++k)
            if (e[k] != 0.0)
                throw ParameterError("SolverParams: direction has components beyond the dimension");
        if (std::abs(n2 - 1.0) > 1e-12)
            throw ParameterError("SolverParams: direction e must be a unit vector");
        if (method == SolverMethod::direct_1d && dim != 1)
            throw ParameterError("SolverParams: direct solver is one-dimensional only");
    }

    static Vec unit(int k)
    {
        Vec v{0, 0, 0};
        v[k] = 1.0;
        return v;
    }
};

/// Discrete energy identity terms, all as box averages over faces/cells.
struct EnergyReport
{
    double mass = 0.0;          ///< (1/T) <phi^2>
    double gradient = 0.0;      ///< <grad phi . a grad phi>
    double cross = 0.0;         ///< -<grad phi . a e>
    double e_energy = 0.0;      ///< <e . a e>
    double lhs = 0.0;           ///< mass + gradient
    double rhs = 0.0;           ///< sqrt(gradient * e_energy)
    bool violated = false;

    double slack() const { return rhs - lhs; }
};

struct SolveStats
{
    long iterations = 0;
    double relative_residual = 0.0;
    SolverMethod method = SolverMethod::automatic;
};

/// Process-wide solve counters; every solve runs the energy check and records it.
struct Diagnostics
{
    std::atomic<long> solves{0};
    std::atomic<long> energy_checks{0};
    std::atomic<long> energy_violations{0};
    std::atomic<long> window_solves{0};
};

inline Diagnostics& diagnostics()
{
    static Diagnostics d;
    return d;
}

/// phi on cells plus its exact periodic difference quotient on faces.
struct CorrectorField
{
    Grid grid;
    std::vector<double> phi;
    FaceField grad;
    SolveStats stats;
    EnergyReport energy;
    double flux = 0.0; ///< e . (box average of a (grad phi + e))

    std::size_t memory_doubles() const { return phi.size() * (1 + static_cast<std::size_t>(grid.dim())); }
};

// ---------------------------------------------------------------------------
// Discrete operator
// ---------------------------------------------------------------------------

/// Cell-centered finite-volume discretization of (1/T) u - div(a grad u) with
/// periodic boundary conditions; symmetric positive definite for T < inf.
class MassiveOperator
{
  public:
    MassiveOperator(const Grid& g, const FaceField& faces, double T)
      : grid_(g), faces_(&faces), st_(stencil_for(g)), inv_T_(1.0 / T), inv_h2_(1.0 / (g.spacing() * g.spacing()))
    {
        if (faces.cells() != g.cells() || faces.dim != g.dim())
            throw ShapeError("MassiveOperator: face field does not match grid");
    }

    const Grid& grid() const { return grid_; }
    double inv_T() const { return inv_T_; }
    const FaceField& faces() const { return *faces_; }
    const Stencil& stencil() const { return *st_; }

    void apply(std::span<const double> x, std::span<double> y) const
    {
        const std::size_t nc = grid_.cells();
        for (std::size_t c = 0; c < nc; ++c)
            y[c] = inv_T_ * x[c];
        for (int k = 0; k < grid_.dim(); ++k) {
            const auto& a = faces_->comp[k];
            const auto& nb = st_->plus[k];
            for (std::size_t c = 0; c < nc; ++c) {
                const double f = a[c] * inv_h2_ * (x[nb[c]] - x[c]);
                y[c] -= f;
                y[nb[c]] += f;
            }
        }
    }

    /// Right-hand side div(a e) for the corrector in direction e.
    std::vector<double> rhs(const Vec& e) const
    {
        const std::size_t nc = grid_.cells();
        std::vector<double> b(nc, 0.0);
        const double inv_h = 1.0 / grid_.spacing();
        for (int k = 0; k < grid_.dim(); ++k) {
            if (e[k] == 0.0)
                continue;
            const auto& a = faces_->comp[k];
            const auto& mn = st_->minus[k];
            for (std::size_t c = 0; c < nc; ++c)
                b[c] += e[k] * (a[c] - a[mn[c]]) * inv_h;
        }
        return b;
    }

    std::vector<double> diagonal() const
    {
        const std::size_t nc = grid_.cells();
        std::vector<double> d(nc, inv_T_);
        for (int k = 0; k < grid_.dim(); ++k) {
            const auto& a = faces_->comp[k];
            const auto& mn = st_->minus[k];
            for (std::size_t c = 0; c < nc; ++c)
                d[c] += (a[c] + a[mn[c]]) * inv_h2_;
        }
        return d;
    }

    std::pair<double, double> coefficient_range() const
    {
        double lo = INFINITY, hi = 0.0;
        for (int k = 0; k < grid_.dim(); ++k)
            for (double v : faces_->comp[k]) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        return {lo, hi};
    }

  private:
    Grid grid_;
    const FaceField* faces_;
    std::shared_ptr<const Stencil> st_;
    double inv_T_;
    double inv_h2_;
};

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// Preconditioned conjugate gradients; `precond(r, z)` applies M^{-1}.
template <class Apply, class Precond>
SolveStats pcg(Apply&& apply, Precond&& precond, std::span<const double> b, std::span<double> x, double tol,
               long max_iter)
{
    const std::size_t n = b.size();
    SolveStats st;
    const double bnorm = norm2(b);
    if (bnorm == 0.0) {
        std::fill(x.begin(), x.end(), 0.0);
        return st;
    }
    std::vector<double> r(n), z(n), p(n), q(n);
    apply(std::span<const double>(x.data(), n), std::span<double>(q));
    for (std::size_t i = 0; i < n; ++i)
        r[i] = b[i] - q[i];
    double rnorm = norm2(r);
    if (rnorm <= tol * bnorm) {
        st.relative_residual = rnorm / bnorm;
        return st;
    }
    precond(std::span<const double>(r), std::span<double>(z));
    p = z;
    double rz = dot(r, z);
    long it = 0;
    while (it < max_iter) {
        ++it;
        apply(std::span<const double>(p), std::span<double>(q));
        const double alpha = rz / dot(p, q);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        rnorm = norm2(r);
        if (rnorm <= tol * bnorm)
            break;
        precond(std::span<const double>(r), std::span<double>(z));
        const double rz_new = dot(r, z);
        const double beta = rz_new / rz;
        rz = rz_new;
        for (std::size_t i = 0; i < n; ++i)
            p[i] = z[i] + beta * p[i];
    }
    st.iterations = it;
    // true residual
    apply(std::span<const double>(x.data(), n), std::span<double>(q));
    for (std::size_t i = 0; i < n; ++i)
        r[i] = b[i] - q[i];
    st.relative_residual = norm2(r) / bnorm;
    return st;
}

/// Periodic symmetric tridiagonal solve (cyclic Thomas via Sherman-Morrison).
/// diag[i], off[i] couples i and i+1 (off[n-1] couples n-1 and 0).
inline void solve_cyclic_tridiagonal(std::span<const double> diag, std::span<const double> off,
                                     std::span<const double> rhs, std::span<double> x)
{
    const std::size_t n = diag.size();
    const double corner = off[n - 1];
    const double gamma = -diag[0];
    // factor the modified tridiagonal matrix once, then sweep both right-hand sides together
    std::vector<double> inv_bet(n), cp(n), y(n), z(n);
    double bet = diag[0] - gamma;
    inv_bet[0] = 1.0 / bet;
    y[0] = rhs[0] * inv_bet[0];
    z[0] = gamma * inv_bet[0];
    for (std::size_t j = 1; j < n; ++j) {
        cp[j] = off[j - 1] * inv_bet[j - 1];
        const double bj = (j == n - 1) ? diag[j] - corner * corner / gamma : diag[j];
        bet = bj - off[j - 1] * cp[j];
        inv_bet[j] = 1.0 / bet;
        const double uj = (j == n - 1) ? corner : 0.0;
        y[j] = (rhs[j] - off[j - 1] * y[j - 1]) * inv_bet[j];
        z[j] = (uj - off[j - 1] * z[j - 1]) * inv_bet[j];
    }
    for (std::size_t j = n - 1; j-- > 0;) {
        y[j] -= cp[j + 1] * y[j + 1];
        z[j] -= cp[j + 1] * z[j + 1];
    }
    const double fact = (y[0] + corner * y[n - 1] / gamma) / (1.0 + z[0] + corner * z[n - 1] / gamma);
    for (std::size_t i = 0; i < n; ++i)
        x[i] = y[i] - fact * z[i];
}

} // namespace detail

/// Box-averaged energy terms of a computed corrector, and the inequality
/// (1/T)<phi^2> + <grad phi . a grad phi> <= <grad phi . a grad phi>^{1/2} <e . a e>^{1/2}.
inline EnergyReport energy_terms(const Grid& g, const FaceField& faces, std::span<const double> phi,
                                 const FaceField& grad, const Vec& e, double T, double tolerance)
{
    EnergyReport r;
    const std::size_t nc = g.cells();
    const double N = static_cast<double>(nc);
    std::vector<double> buf(nc);
    for (std::size_t c = 0; c < nc; ++c)
        buf[c] = phi[c] * phi[c];
    r.mass = pairwise_sum(buf) / N / T;
    for (int k = 0; k < g.dim(); ++k) {
        const auto& a = faces.comp[k];
        const auto& gk = grad.comp[k];
        for (std::size_t c = 0; c < nc; ++c)
            buf[c] = a[c] * gk[c] * gk[c];
        r.gradient += pairwise_sum(buf) / N;
        for (std::size_t c = 0; c < nc; ++c)
            buf[c] = a[c] * gk[c] * e[k];
        r.cross -= pairwise_sum(buf) / N;
        for (std::size_t c = 0; c < nc; ++c)
            buf[c] = a[c] * e[k] * e[k];
        r.e_energy += pairwise_sum(buf) / N;
    }
    r.lhs = r.mass + r.gradient;
    r.rhs = std::sqrt(r.gradient * r.e_energy);
    const double slack_tol = 10.0 * tolerance * r.e_energy + 1e-300;
    r.violated = (r.lhs > r.rhs + slack_tol) || (r.gradient > r.e_energy + slack_tol);
    return r;
}

inline void record_energy(const EnergyReport& r)
{
    diagnostics().energy_checks.fetch_add(1, std::memory_order_relaxed);
    if (r.violated)
        diagnostics().energy_violations.fetch_add(1, std::memory_order_relaxed);
}

inline FaceField gradient_of(const Grid& g, std::span<const double> phi)
{
    auto st = stencil_for(g);
    FaceField grad(g.dim(), g.cells());
    const double inv_h = 1.0 / g.spacing();
    for (int k = 0; k < g.dim(); ++k)
        for (std::size_t c = 0; c < g.cells(); ++c)
            grad.comp[k][c] = (phi[st->plus[k][c]] - phi[c]) * inv_h;
    return grad;
}

/// e . <a (grad phi + e)> for a single direction.
inline double directional_flux(const FaceField& faces, const FaceField& grad, const Vec& e)
{
    double s = 0.0;
    std::vector<double> buf(faces.cells());
    for (int k = 0; k < faces.dim; ++k) {
        if (e[k] == 0.0)
            continue;
        for (std::size_t c = 0; c < buf.size(); ++c)
            buf[c] = faces.comp[k][c] * (grad.comp[k][c] + e[k]);
        s += e[k] * pairwise_sum(buf) / static_cast<double>(buf.size());
    }
    return s;
}

/// Box average of a (grad phi + e), one component per direction.
inline Vec flux_vector(const FaceField& faces, const FaceField& grad, const Vec& e)
{
    Vec out{0, 0, 0};
    std::vector<double> buf(faces.cells());
    for (int k = 0; k < faces.dim; ++k) {
        for (std::size_t c = 0; c < buf.size(); ++c)
            buf[c] = faces.comp[k][c] * (grad.comp[k][c] + e[k]);
        out[k] = pairwise_sum(buf) / static_cast<double>(buf.size());
    }
    return out;
}

/// Solve the massive corrector equation for given face coefficients.
inline CorrectorField solve_faces(const Grid& g, const FaceField& faces, const SolverParams& params)
{
    params.validate(g.dim());
    MassiveOperator op(g, faces, params.T);
    const auto [amin, amax] = op.coefficient_range();
    if (!(amin > 0.0) || !std::isfinite(amax))
        throw MaterialError("solve: face coefficients must be positive and finite (non-elliptic field)");

    CorrectorField out;
    out.grid = g;
    out.phi.assign(g.cells(), 0.0);
    const auto b = op.rhs(params.e);
    const long max_iter = params.max_iterations > 0 ? params.max_iterations : 10 * static_cast<long>(g.cells());

    SolverMethod method = params.method;
    if (method == SolverMethod::automatic)
        method = g.dim() == 1 ? SolverMethod::direct_1d : SolverMethod::pcg_spectral;

    SolveStats st;
    auto apply = [&](std::span<const double> x, std::span<double> y) { op.apply(x, y); };
    switch (method) {
    case SolverMethod::direct_1d: {
        const std::size_t n = g.cells();
        const double inv_h2 = 1.0 / (g.spacing() * g.spacing());
        std::vector<double> diag = op.diagonal(), off(n);
        for (std::size_t c = 0; c < n; ++c)
            off[c] = -faces.comp[0][c] * inv_h2;
        const double bnorm = detail::norm2(b);
        if (bnorm > 0.0) {
            std::vector<double> r(b), dx(n), q(n);
            // one solve plus iterative refinement until the residual contract holds
            for (int pass = 0; pass < 4; ++pass) {
                detail::solve_cyclic_tridiagonal(diag, off, r, dx);
                for (std::size_t i = 0; i < n; ++i)
                    out.phi[i] += dx[i];
                op.apply(out.phi, q);
                for (std::size_t i = 0; i < n; ++i)
                    r[i] = b[i] - q[i];
                ++st.iterations;
                st.relative_residual = detail::norm2(r) / bnorm;
                if (st.relative_residual <= params.tolerance)
                    break;
            }
        }
        break;
    }
    case SolverMethod::pcg_jacobi: {
        const auto d = op.diagonal();
        auto pre = [&](std::span<const double> r, std::span<double> z) {
            for (std::size_t i = 0; i < r.size(); ++i)
                z[i] = r[i] / d[i];
        };
        st = detail::pcg(apply, pre, b, out.phi, params.tolerance, max_iter);
        break;
    }
    case SolverMethod::pcg_spectral:
    case SolverMethod::automatic: {
        SpectralPreconditioner pc(g, 1.0 / params.T, std::sqrt(amin * amax));
        auto pre = [&](std::span<const double> r, std::span<double> z) { pc.apply(r, z); };
        st = detail::pcg(apply, pre, b, out.phi, params.tolerance, max_iter);
        break;
    }
    }
    st.method = method;
    out.stats = st;
    diagnostics().solves.fetch_add(1, std::memory_order_relaxed);
    if (!(st.relative_residual <= params.tolerance))
        throw ConvergenceError("solve: tolerance not reached (relative residual " +
                                   std::to_string(st.relative_residual) + ")",
                               st.relative_residual, st.iterations);
    out.grad = gradient_of(g, out.phi);
    out.energy = energy_terms(g, faces, out.phi, out.grad, params.e, params.T, params.tolerance);
    record_energy(out.energy);
    out.flux = directional_flux(faces, out.grad, params.e);
    return out;
}

inline void check_elliptic(const CoefficientField& a)
{
    for (std::size_t c = 0; c < a.values.size(); ++c) {
        const auto [lo, hi] = a[c].eigen_bounds();
        if (!(lo > 0.0) || !std::isfinite(hi))
            throw MaterialError("coefficient field is not uniformly elliptic at cell " + std::to_string(c));
    }
}

/// (1/T) phi - div A (grad phi + e) = 0 on the periodic grid.
inline CorrectorField solve_massive(const CoefficientField& a, const SolverParams& params)
{
    check_elliptic(a);
    return solve_faces(a.grid, face_coefficients(a), params);
}

/// Box average of A (grad phi + e) as a d-vector.
inline Vec flux_average(const CoefficientField& a, const CorrectorField& phi, const Vec& e)
{
    if (!(a.grid == phi.grid))
        throw ShapeError("flux_average: coefficient and corrector grids differ");
    return flux_vector(face_coefficients(a), phi.grad, e);
}

/// Full homogenized-matrix estimate from d directional solves; entry (i, j)
/// is the i-th flux component for e = e_j.
inline std::array<std::array<double, 3>, 3> homogenized_matrix(const CoefficientField& a, SolverParams params)
{
    std::array<std::array<double, 3>, 3> m{};
    const auto faces = face_coefficients(a);
    for (int j = 0; j < a.grid.dim(); ++j) {
        params.e = SolverParams::unit(j);
        const auto phi = solve_faces(a.grid, faces, params);
        const Vec f = flux_vector(faces, phi.grad, params.e);
        for (int i = 0; i < a.grid.dim(); ++i)
            m[i][j] = f[i];
    }
    return m;
}

/// Recomputes the energy inequality for a given corrector.
inline EnergyReport energy_check(const CoefficientField& a, const CorrectorField& phi, const Vec& e, double T,
                                 double tolerance = 1e-10)
{
    if (!(a.grid == phi.grid))
        throw ShapeError("energy_check: grid mismatch");
    auto r = energy_terms(a.grid, face_coefficients(a), phi.phi, phi.grad, e, T, tolerance);
    record_energy(r);
    return r;
}

// ---------------------------------------------------------------------------
// Window solves
// ---------------------------------------------------------------------------

/// Solve (1/T) w - div(a grad w) = rhs on the cells of `active` with w = 0 on
/// every other cell (Dirichlet truncation). Jacobi-preconditioned CG restricted
/// to the window, so the cost scales with the window size.
inline std::vector<double> solve_window(const MassiveOperator& op, std::span<const double> rhs,
                                        std::span<const CellIndex> active, double tol, long max_iter,
                                        SolveStats* stats = nullptr)
{
    const Grid& g = op.grid();
    const auto& st = op.stencil();
    const auto& faces = op.faces();
    const double inv_h2 = 1.0 / (g.spacing() * g.spacing());
    const std::size_t m = active.size();
    std::vector<double> full(g.cells(), 0.0), out(g.cells(), 0.0);

    std::vector<double> diag(m, op.inv_T());
    std::vector<double> b(m);
    for (std::size_t i = 0; i < m; ++i) {
        const CellIndex c = active[i];
        for (int k = 0; k < g.dim(); ++k)
            diag[i] += (faces.comp[k][c] + faces.comp[k][st.minus[k][c]]) * inv_h2;
        b[i] = rhs[c];
    }
    auto apply = [&](std::span<const double> x, std::span<double> y) {
        for (std::size_t i = 0; i < m; ++i)
            full[active[i]] = x[i];
        for (std::size_t i = 0; i < m; ++i) {
            const CellIndex c = active[i];
            double v = op.inv_T() * full[c];
            for (int k = 0; k < g.dim(); ++k) {
                const CellIndex p = st.plus[k][c], q = st.minus[k][c];
                v += (faces.comp[k][c] * (full[c] - full[p]) + faces.comp[k][q] * (full[c] - full[q])) * inv_h2;
            }
            y[i] = v;
        }
    };
    auto pre = [&](std::span<const double> r, std::span<double> z) {
        for (std::size_t i = 0; i < m; ++i)
            z[i] = r[i] / diag[i];
    };
    std::vector<double> x(m, 0.0);
    const SolveStats s = detail::pcg(apply, pre, b, x, tol, max_iter);
    diagnostics().window_solves.fetch_add(1, std::memory_order_relaxed);
    if (stats)
        *stats = s;
    if (!(s.relative_residual <= tol))
        throw ConvergenceError("solve_window: tolerance not reached", s.relative_residual, s.iterations);
    for (std::size_t i = 0; i < m; ++i)
        out[active[i]] = x[i];
    return out;
}

// ---------------------------------------------------------------------------
// Locality probe
// ---------------------------------------------------------------------------

struct LocalityProfile
{
    std::vector<double> radius;    ///< bin centers (distance to the perturbed cube center)
    std::vector<double> envelope;  ///< max |grad phi - grad phi'| in the bin
    double peak = 0.0;
    double rate = 0.0;             ///< fitted exponential decay rate
    double fit_from = 0.0;
    double fit_to = 0.0;
};

struct LocalityOptions
{
    bool modify = true;
    double bin_width = 0.0;      ///< 0 -> grid spacing
    double fit_start = 0.0;      ///< 0 -> 2 + sqrt(T)
    double noise_floor = 1e-11;  ///< relative to peak; bins below are excluded from the fit
};

/// Sensitivity of grad phi_T to a phase swap on the unit cube Q(y) = y + [0,1)^d.
inline LocalityProfile locality_probe(const CoefficientField& a, const MaterialPair& mat, const SolverParams& params,
                                      const Vec& y, const LocalityOptions& opt = {})
{
    const Grid& g = a.grid;
    if (g.box.side < 10.0 * std::sqrt(params.T))
        throw GeometryError("locality_probe: box side must be at least 10 sqrt(T)");
    CoefficientField mod = a;
    Vec center{0, 0, 0};
    for (int k = 0; k < g.dim(); ++k)
        center[k] = y[k] + 0.5;
    if (opt.modify) {
        for (std::size_t c = 0; c < g.cells(); ++c) {
            const Vec x = g.center(c);
            bool inside = true;
            for (int k = 0; k < g.dim(); ++k) {
                const double d = g.box.wrap_delta(x[k] - y[k]);
                const double dd = d < 0 ? d + g.box.side : d;
                if (!(dd < 1.0))
                    inside = false;
            }
            if (inside)
                mod[c] = (a[c] == mat.a2) ? mat.a1_at(x) : mat.a2;
        }
    }
    const auto phi0 = solve_massive(a, params);
    const auto phi1 = solve_massive(mod, params);

    LocalityProfile prof;
    const double bw = opt.bin_width > 0 ? opt.bin_width : g.spacing();
    const std::size_t nbins = static_cast<std::size_t>(std::ceil(g.box.max_distance() / bw)) + 1;
    prof.envelope.assign(nbins, 0.0);
    prof.radius.resize(nbins);
    for (std::size_t i = 0; i < nbins; ++i)
        prof.radius[i] = (static_cast<double>(i) + 0.5) * bw;
    for (int k = 0; k < g.dim(); ++k)
        for (std::size_t c = 0; c < g.cells(); ++c) {
            Vec x = g.center(c);
            x[k] += 0.5 * g.spacing();
            const double r = g.box.distance(x, center);
            const double v = std::abs(phi1.grad.comp[k][c] - phi0.grad.comp[k][c]);
            auto& slot = prof.envelope[std::min(nbins - 1, static_cast<std::size_t>(r / bw))];
            slot = std::max(slot, v);
        }
    for (double v : prof.envelope)
        prof.peak = std::max(prof.peak, v);
    if (prof.peak == 0.0)
        return prof;

    prof.fit_from = opt.fit_start > 0 ? opt.fit_start : 2.0 + std::sqrt(params.T);
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < nbins; ++i) {
        if (prof.radius[i] < prof.fit_from || prof.radius[i] > 0.5 * g.box.side)
            continue;
        if (prof.envelope[i] <= opt.noise_floor * prof.peak)
            break;
        xs.push_back(prof.radius[i]);
        ys.push_back(std::log(prof.envelope[i]));
        prof.fit_to = prof.radius[i];
    }
    if (xs.size() >= 2)
        prof.rate = -fit_line(xs, ys).slope;
    return prof;
}

// ---------------------------------------------------------------------------
// Solver log
// ---------------------------------------------------------------------------

inline const char* to_string(SolverMethod m)
{
    switch (m) {
    case SolverMethod::automatic: return "automatic";
    case SolverMethod::pcg_jacobi: return "pcg_jacobi";
    case SolverMethod::pcg_spectral: return "pcg_spectral";
    case SolverMethod::direct_1d: return "direct_1d";
    }
    return "?";
}

/// CSV header of the solver log.
inline void write_solver_log_header(std::ostream& os)
{
    os << "solve_id,method,iterations,relative_residual,energy_lhs,energy_rhs,flux\n";
}

inline void write_solver_log_row(std::ostream& os, const std::string& id, const CorrectorField& f)
{
    os << id << ',' << to_string(f.stats.method) << ',' << f.stats.iterations << ','
       << format_g17(f.stats.relative_residual) << ',' << format_g17(f.energy.lhs) << ','
       << format_g17(f.energy.rhs) << ',' << format_g17(f.flux) << '\n';
}

} // namespace clex
