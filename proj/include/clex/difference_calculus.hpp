#pragma once

#include <algorithm>
#include <cmath>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <unordered_map>
#include <vector>

#include "clusters.hpp"
#include "corrector_solver.hpp"
#include "errors.hpp"
#include "inclusion_field.hpp"
#include "index_set.hpp"

namespace clex {

/// Gradient-level field: one value per face and direction.
using GradientField = FaceField;

/// Least-recently-used corrector store keyed by IndexSet; capacity in cells.
class CorrectorCache
{
  public:
    using Value = std::shared_ptr<const CorrectorField>;

    struct Stats
    {
        std::size_t hits = 0;
        std::size_t misses = 0;
        std::size_t evictions = 0;
        std::size_t entries = 0;
        std::size_t cells = 0;
    };

    explicit CorrectorCache(std::size_t capacity_cells) : capacity_(capacity_cells) {}

    Value find(const IndexSet& key)
    {
        std::lock_guard lock(mtx_);
        auto it = map_.find(key);
        if (it == map_.end()) {
            ++stats_.misses;
            return nullptr;
        }
        ++stats_.hits;
        order_.splice(order_.begin(), order_, it->second.pos);
        return it->second.value;
    }

    /// Inserts unless present; returns the retained value (first insertion wins).
    Value insert(const IndexSet& key, Value v)
    {
        std::lock_guard lock(mtx_);
        if (auto it = map_.find(key); it != map_.end())
            return it->second.value;
        const std::size_t sz = v->grid.cells();
        if (sz > capacity_)
            return v;
        while (stats_.cells + sz > capacity_ && !order_.empty()) {
            const IndexSet& victim = order_.back();
            auto vit = map_.find(victim);
            stats_.cells -= vit->second.value->grid.cells();
            map_.erase(vit);
            order_.pop_back();
            ++stats_.evictions;
        }
        order_.push_front(key);
        map_.emplace(key, Entry{v, order_.begin()});
        stats_.cells += sz;
        stats_.entries = map_.size();
        return v;
    }

    Stats stats() const
    {
        std::lock_guard lock(mtx_);
        Stats s = stats_;
        s.entries = map_.size();
        return s;
    }

    std::size_t capacity() const { return capacity_; }

  private:
    struct Entry
    {
        Value value;
        std::list<IndexSet>::iterator pos;
    };
    std::size_t capacity_;
    mutable std::mutex mtx_;
    std::list<IndexSet> order_;
    std::unordered_map<IndexSet, Entry, IndexSetHash> map_;
    Stats stats_;
};

struct ContextOptions
{
    std::size_t subset_cap = 8;
    std::size_t cache_cells = 0; ///< 0 -> 2 GiB worth of corrector fields
    bool window = false;         ///< localized-window solves for nonempty subsets
    double window_c1 = 2.0;
    double window_eps = 1e-6;

    double window_radius(double T) const { return window_c1 * std::sqrt(T) * std::log(1.0 / window_eps); }
};

inline std::size_t default_cache_cells(int dim)
{
    return (std::size_t{2} << 30) / (sizeof(double) * static_cast<std::size_t>(1 + dim));
}

/// One realization: a cloud, materials, grid and solver settings, plus the
/// family of subset correctors phi^E computed on demand and memoized.
class RealizationContext
{
  public:
    RealizationContext(PointCloud cloud, MaterialPair mat, Grid grid, SolverParams solver, ContextOptions opt = {})
      : cloud_(std::move(cloud)), mat_(std::move(mat)), grid_(grid), solver_(solver), opt_(opt),
        cache_(opt.cache_cells ? opt.cache_cells : default_cache_cells(grid.dim()))
    {
        mat_.validate();
        solver_.validate(grid_.dim());
        if (!(cloud_.box.dim == grid_.box.dim && cloud_.box.side == grid_.box.side))
            throw ShapeError("RealizationContext: cloud box and grid box differ");
        if (mat_.dim() != grid_.dim())
            throw ShapeError("RealizationContext: material dimension differs from grid");
        balls_.reserve(cloud_.size());
        for (const auto& p : cloud_.points)
            balls_.push_back(cells_within(grid_, p.x, inclusion_radius));
        base_cell_.resize(grid_.cells() * static_cast<std::size_t>(grid_.dim()));
        for (std::size_t c = 0; c < grid_.cells(); ++c) {
            const SymMatrix a = mat_.a1_at(grid_.center(c));
            if (mat_.a1_field)
                mat_.check_matrix(a, "A1 field");
            for (int k = 0; k < grid_.dim(); ++k)
                base_cell_[c * grid_.dim() + k] = a(k, k);
        }
    }

    const PointCloud& cloud() const { return cloud_; }
    const MaterialPair& materials() const { return mat_; }
    const Grid& grid() const { return grid_; }
    const SolverParams& solver() const { return solver_; }
    const ContextOptions& options() const { return opt_; }
    CorrectorCache::Stats cache_stats() const { return cache_.stats(); }
    const std::vector<CellIndex>& ball(Label l) const
    {
        cloud_.at(l);
        return balls_[l];
    }

    bool in_union(const IndexSet& e, CellIndex c) const
    {
        for (Label l : e) {
            const auto& b = balls_[l];
            if (std::binary_search(b.begin(), b.end(), c))
                return true;
        }
        return false;
    }

    /// Diagonal entry k of A^E at cell c.
    double cell_coefficient(const IndexSet& e, int k, CellIndex c) const
    {
        return in_union(e, c) ? mat_.a2(k, k) : base_cell_[c * grid_.dim() + k];
    }

    /// Face coefficient of A^E on face (c, k).
    double face_coefficient(const IndexSet& e, int k, CellIndex c) const
    {
        const auto& st = *stencil_for(grid_);
        return harmonic_mean(cell_coefficient(e, k, c), cell_coefficient(e, k, st.plus[k][c]));
    }

    CoefficientField coefficients(const IndexSet& e) const { return assemble_A(cloud_, e, mat_, grid_); }

    FaceField faces(const IndexSet& e) const { return face_coefficients(coefficients(e)); }

    /// Faces touching the balls of E (the only faces where A^E can differ from A^empty).
    std::vector<std::pair<int, CellIndex>> support_faces(const IndexSet& e) const
    {
        const auto& st = *stencil_for(grid_);
        std::vector<std::pair<int, CellIndex>> out;
        for (int k = 0; k < grid_.dim(); ++k) {
            std::vector<CellIndex> cells;
            for (Label l : e)
                for (CellIndex c : balls_[l]) {
                    cells.push_back(c);
                    cells.push_back(st.minus[k][c]);
                }
            std::sort(cells.begin(), cells.end());
            cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
            for (CellIndex c : cells)
                out.emplace_back(k, c);
        }
        return out;
    }

    void check_labels(const IndexSet& e) const
    {
        for (Label l : e)
            cloud_.at(l);
    }

    /// phi^E: (1/T) phi - div A^E (grad phi + e) = 0, memoized by E.
    std::shared_ptr<const CorrectorField> corrector(const IndexSet& e)
    {
        check_labels(e);
        if (auto hit = cache_.find(e))
            return hit;
        auto f = std::make_shared<CorrectorField>(compute(e));
        return cache_.insert(e, std::move(f));
    }

    /// Flux e . <A^E (grad phi^E + e)>, memoized separately from the fields.
    double flux(const IndexSet& e)
    {
        {
            std::lock_guard lock(flux_mtx_);
            if (auto it = flux_.find(e); it != flux_.end())
                return it->second;
        }
        const double v = corrector(e)->flux;
        std::lock_guard lock(flux_mtx_);
        flux_.emplace(e, v);
        return v;
    }

    void guard(std::size_t n) const
    {
        if (n > opt_.subset_cap)
            throw CombinatorialGuardError("subset cap exceeded (" + std::to_string(n) + " > " +
                                          std::to_string(opt_.subset_cap) + ")");
    }

    /// grad delta^F phi^H = sum_{G subset F} (-1)^{|F \ G|} grad phi^{G u H};
    /// with_e adds e when F is empty.
    GradientField delta(const IndexSet& f, const IndexSet& h = {}, bool with_e = false)
    {
        if (!f.disjoint_from(h))
            throw ContractError("delta: F and H overlap");
        guard(f.size() + h.size());
        GradientField out(grid_.dim(), grid_.cells());
        for_each_subset(f, [&](const IndexSet& g) {
            const double sign = parity_sign(f.size() - g.size());
            out.axpy(sign, corrector(g.unite(h))->grad);
        });
        if (with_e && f.empty())
            for (int k = 0; k < grid_.dim(); ++k)
                for (double& v : out.comp[k])
                    v += solver_.e[k];
        return out;
    }

    /// delta^F applied to the flux functional at base H.
    double delta_flux(const IndexSet& f, const IndexSet& h = {})
    {
        if (!f.disjoint_from(h))
            throw ContractError("delta_flux: F and H overlap");
        guard(f.size());
        std::vector<double> terms;
        for_each_subset(f, [&](const IndexSet& g) {
            terms.push_back(parity_sign(f.size() - g.size()) * flux(g.unite(h)));
        });
        return pairwise_sum(terms);
    }

    /// L2 norm sqrt(sum_faces |u|^2 dx^d) of a gradient field.
    double l2_norm(const GradientField& u) const
    {
        return std::sqrt(u.mean_square() * grid_.box.volume());
    }

  private:
    CorrectorField compute(const IndexSet& e)
    {
        if (opt_.window && !e.empty()) {
            auto base = corrector(IndexSet{});
            if (auto w = window_solve(e, *base))
                return std::move(*w);
        }
        return solve_faces(grid_, faces(e), solver_);
    }

    std::unique_ptr<CorrectorField> window_solve(const IndexSet& e, const CorrectorField& base)
    {
        const double radius = opt_.window_radius(solver_.T);
        std::vector<CellIndex> active;
        for (Label l : e) {
            auto cs = cells_within(grid_, cloud_.at(l).x, radius);
            active.insert(active.end(), cs.begin(), cs.end());
        }
        std::sort(active.begin(), active.end());
        active.erase(std::unique(active.begin(), active.end()), active.end());
        if (2 * active.size() > grid_.cells())
            return nullptr;

        const FaceField fe = faces(e);
        const FaceField f0 = faces(IndexSet{});
        const auto& st = *stencil_for(grid_);
        const double inv_h = 1.0 / grid_.spacing();
        std::vector<double> rhs(grid_.cells(), 0.0);
        for (int k = 0; k < grid_.dim(); ++k)
            for (std::size_t c = 0; c < grid_.cells(); ++c) {
                const double q = (fe.comp[k][c] - f0.comp[k][c]) * (base.grad.comp[k][c] + solver_.e[k]);
                if (q == 0.0)
                    continue;
                rhs[c] += q * inv_h;
                rhs[st.plus[k][c]] -= q * inv_h;
            }
        MassiveOperator op(grid_, fe, solver_.T);
        const long max_iter = solver_.max_iterations > 0 ? solver_.max_iterations : 10 * static_cast<long>(active.size());
        SolveStats stats;
        auto w = solve_window(op, rhs, active, solver_.tolerance, max_iter, &stats);

        auto out = std::make_unique<CorrectorField>();
        out->grid = grid_;
        out->phi = base.phi;
        for (std::size_t c = 0; c < grid_.cells(); ++c)
            out->phi[c] += w[c];
        out->grad = gradient_of(grid_, out->phi);
        out->stats = stats;
        out->stats.method = SolverMethod::pcg_jacobi;
        out->energy = energy_terms(grid_, fe, out->phi, out->grad, solver_.e, solver_.T, opt_.window_eps);
        record_energy(out->energy);
        out->flux = directional_flux(fe, out->grad, solver_.e);
        return out;
    }

    PointCloud cloud_;
    MaterialPair mat_;
    Grid grid_;
    SolverParams solver_;
    ContextOptions opt_;
    CorrectorCache cache_;
    std::vector<std::vector<CellIndex>> balls_;
    std::vector<double> base_cell_;
    std::mutex flux_mtx_;
    std::map<IndexSet, double> flux_;
};

/// phi^E of the context (alias kept for call sites that read better with it).
inline std::shared_ptr<const CorrectorField> corrector_for_subset(RealizationContext& ctx, const IndexSet& e)
{
    return ctx.corrector(e);
}

inline GradientField delta(RealizationContext& ctx, const IndexSet& f, const IndexSet& h, bool with_e)
{
    return ctx.delta(f, h, with_e);
}

/// Max-norm residual of grad delta_e^G phi^{F u H} = sum_{S subset F} grad delta_e^{S u G} phi^H,
/// together with the admissible budget 10 2^{|F|+|G|} tol |grad phi^empty + e|_inf.
struct BinomialCheck
{
    double residual = 0.0;
    double budget = 0.0;
    bool ok() const { return residual <= budget; }
};

inline BinomialCheck check_binomial(RealizationContext& ctx, const IndexSet& f, const IndexSet& g,
                                    const IndexSet& h)
{
    if (!f.disjoint_from(g) || !f.disjoint_from(h) || !g.disjoint_from(h))
        throw ContractError("check_binomial: F, G, H must be pairwise disjoint");
    ctx.guard(f.size() + g.size() + h.size());
    GradientField lhs = ctx.delta(g, f.unite(h), true);
    GradientField rhs(ctx.grid().dim(), ctx.grid().cells());
    for_each_subset(f, [&](const IndexSet& s) { rhs.axpy(1.0, ctx.delta(s.unite(g), h, true)); });
    BinomialCheck r;
    r.residual = lhs.max_abs_difference(rhs);
    const GradientField base = ctx.delta({}, {}, true);
    r.budget = 10.0 * std::ldexp(1.0, static_cast<int>(f.size() + g.size())) * ctx.solver().tolerance * base.max_abs();
    return r;
}

struct SeparationSample
{
    double value = 0.0; ///< |grad delta^F phi|_{L2}
    double gap = 0.0;   ///< smallest pairwise |x_m - x_n| - 2
};

inline SeparationSample separation_decay(RealizationContext& ctx, const IndexSet& f)
{
    if (f.size() < 2)
        throw ContractError("separation_decay: need |F| >= 2");
    SeparationSample s;
    s.value = ctx.l2_norm(ctx.delta(f));
    s.gap = min_gap(ctx.cloud(), f);
    return s;
}

struct PartialSum
{
    GradientField field;
    double error_l2 = 0.0; ///< |partial - grad phi^{E(p)}|_{L2}
    IndexSet thinned;
    std::size_t clusters = 0;
};

/// Order-k cluster partial sum sum_{F subset E(p), |F| <= k, diam F <= rho} grad delta^F phi.
inline PartialSum cluster_corrector_partial(RealizationContext& ctx, double p, int k, std::uint64_t thin_seed,
                                            double rho, std::size_t max_clusters = 200000)
{
    if (k < 0 || k > 3)
        throw CombinatorialGuardError("cluster_corrector_partial: k must lie in 0..3");
    PartialSum out;
    out.thinned = thinning_set(ctx.cloud(), p, thin_seed);
    out.field = GradientField(ctx.grid().dim(), ctx.grid().cells());
    const ProximityGraph graph(ctx.cloud(), out.thinned, rho);
    for (int j = 0; j <= k; ++j)
        graph.for_each_clique(static_cast<std::size_t>(j), [&](const IndexSet& f) {
            if (++out.clusters > max_clusters)
                throw CombinatorialGuardError("cluster_corrector_partial: cluster budget exceeded");
            out.field.axpy(1.0, ctx.delta(f));
        });
    GradientField diff = out.field;
    diff.axpy(-1.0, ctx.corrector(out.thinned)->grad);
    out.error_l2 = ctx.l2_norm(diff);
    return out;
}

} // namespace clex
