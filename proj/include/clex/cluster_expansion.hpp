#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "clusters.hpp"
#include "corrector_solver.hpp"
#include "difference_calculus.hpp"
#include "errors.hpp"
#include "inclusion_field.hpp"
#include "parallel.hpp"
#include "point_process.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace clex {

enum class Verdict { pass, inconclusive, fail };

inline const char* to_string(Verdict v)
{
    switch (v) {
    case Verdict::pass: return "pass";
    case Verdict::inconclusive: return "inconclusive";
    case Verdict::fail: return "fail";
    }
    return "?";
}

/// Everything fixed across realizations: geometry, process, materials, solver.
struct ContextFactory
{
    enum class Process { discretized, poisson };

    int dim = 1;
    double L = 200.0;
    long n = 800;
    double lambda = 0.1;
    double h = 0.1;
    Process process = Process::discretized;
    MaterialPair mat = MaterialPair::isotropic(1, 1.0, 4.0);
    SolverParams solver;
    ContextOptions context;

    Box box() const { return Box{dim, L, true}; }
    Grid grid() const { return Grid(box(), n); }

    void validate() const
    {
        box().validate();
        grid().validate();
        if (!(lambda >= 0.0))
            throw ParameterError("ContextFactory: lambda must be nonnegative");
        if (process == Process::discretized) {
            cubes_per_side(L, h);
            discretized_bernoulli(h, lambda, dim);
        }
        if (mat.dim() != dim)
            throw ShapeError("ContextFactory: material dimension differs from d");
        mat.validate();
        solver.validate(dim);
    }

    PointCloud sample(const Seed& seed, std::uint64_t index) const
    {
        const std::uint64_t s = seed.derive("cloud", index);
        return process == Process::poisson ? sample_poisson(lambda, box(), s) : sample_discretized(h, lambda, box(), s);
    }

    RealizationContext context_for(const Seed& seed, std::uint64_t index) const
    {
        return RealizationContext(sample(seed, index), mat, grid(), solver, context);
    }
};

struct MCParams
{
    std::size_t N = 100;
    std::uint64_t seed = 0;
    double rho_trunc = 0.0;     ///< 0 -> sqrt(T) ln(1e6)
    double confidence = 0.95;
    unsigned workers = 1;
    double max_failure_fraction = 0.01;
    std::size_t cluster_budget = 0; ///< 0 -> enumerate every cluster

    double rho(double T) const { return rho_trunc > 0 ? rho_trunc : default_truncation_radius(T); }

    void validate() const
    {
        if (N < 1)
            throw ParameterError("MCParams: N must be at least 1");
        if (!(confidence > 0.0 && confidence < 1.0))
            throw ParameterError("MCParams: confidence must lie in (0,1)");
        if (rho_trunc != 0.0 && rho_trunc < 2.0 * inclusion_radius)
            throw ParameterError("MCParams: rho_trunc smaller than one inclusion diameter");
    }
};

/// Per-realization sample vectors with solver failures excluded.
struct SampleTable
{
    std::vector<std::vector<double>> rows;
    std::size_t failures = 0;

    Estimate column(std::size_t c) const
    {
        std::vector<double> xs;
        xs.reserve(rows.size());
        for (const auto& r : rows)
            xs.push_back(r[c]);
        return estimate_from_samples(xs);
    }

    std::size_t columns() const { return rows.empty() ? 0 : rows.front().size(); }
};

/// Runs fn(i) for i < N on the worker pool. Realizations whose solve fails to
/// converge are dropped; more than max_failure_fraction of them aborts.
template <class Fn>
SampleTable collect(const MCParams& mc, Fn&& fn)
{
    mc.validate();
    auto out = parallel_map<std::optional<std::vector<double>>>(mc.N, mc.workers, [&](std::size_t i)
                                                                 -> std::optional<std::vector<double>> {
        try {
            return fn(i);
        } catch (const ConvergenceError&) {
            return std::nullopt;
        }
    });
    SampleTable t;
    for (auto& o : out) {
        if (o)
            t.rows.push_back(std::move(*o));
        else
            ++t.failures;
    }
    const double allowed = std::floor(mc.max_failure_fraction * static_cast<double>(mc.N));
    if (static_cast<double>(t.failures) > allowed)
        throw ConvergenceError("too many failed realizations (" + std::to_string(t.failures) + " of " +
                                   std::to_string(mc.N) + ")",
                               NAN, 0);
    if (t.rows.empty())
        throw ConvergenceError("no successful realizations", NAN, 0);
    return t;
}

struct CoefficientEstimate
{
    Estimate value;
    std::size_t failures = 0;
    double clusters_per_sample = 0.0;
    bool subsampled = false;
};

enum class ClusterRoute {
    formula, ///< box average of grad delta_e^G phi . C_{F\G||G} (grad phi^F + e)
    moebius, ///< j! sum_F delta^F applied to the flux
};

/// Face-level C_{S||G} = (-1)^{|S|+1} sum_{U subset S} (-1)^{|S\U|} a^{U u G}
/// on face (c, k); zero for S empty.
inline double face_c(RealizationContext& ctx, const IndexSet& s, const IndexSet& g, int k, CellIndex c)
{
    if (s.empty())
        return 0.0;
    double sum = 0.0;
    for_each_subset(s, [&](const IndexSet& u) {
        sum += parity_sign(s.size() - u.size()) * ctx.face_coefficient(u.unite(g), k, c);
    });
    return parity_sign(s.size() + 1) * sum;
}

/// sum_{G subset F} (-1)^{|F\G|+1} <grad delta_e^G phi . C_{F\G||G} (grad phi^F + e)>,
/// the contribution of one cluster F to the j-th coefficient (before the j! factor).
/// The G = F term is zero by C_{empty||F} = 0; include_full_term evaluates it anyway.
inline double formula_term(RealizationContext& ctx, const IndexSet& f, bool include_full_term = false)
{
    if (f.empty())
        return ctx.flux(f);
    ctx.guard(f.size());
    const std::size_t j = f.size();
    const std::uint64_t full = (std::uint64_t{1} << j) - 1;
    std::vector<std::shared_ptr<const CorrectorField>> phi(full + 1);
    for (std::uint64_t m = 0; m <= full; ++m)
        phi[m] = ctx.corrector(f.select(m));
    const Vec& e = ctx.solver().e;
    const auto faces = ctx.support_faces(f);
    std::vector<double> acc;
    acc.reserve(faces.size());
    std::vector<double> a(full + 1);
    for (const auto& [k, c] : faces) {
        for (std::uint64_t m = 0; m <= full; ++m)
            a[m] = ctx.face_coefficient(f.select(m), k, c);
        const double vf = phi[full]->grad.comp[k][c] + e[k];
        double face_sum = 0.0;
        for (std::uint64_t gm = 0; gm <= full; ++gm) {
            const std::uint64_t sm = full ^ gm;
            const int s_size = __builtin_popcountll(sm);
            double cval = 0.0;
            if (s_size > 0) {
                // submasks u of sm
                for (std::uint64_t u = sm;; u = (u - 1) & sm) {
                    cval += parity_sign(s_size - __builtin_popcountll(u)) * a[u | gm];
                    if (u == 0)
                        break;
                }
                cval *= parity_sign(s_size + 1);
            } else if (!include_full_term) {
                continue;
            }
            double dg = (gm == 0) ? e[k] : 0.0;
            const int g_size = __builtin_popcountll(gm);
            for (std::uint64_t v = gm;; v = (v - 1) & gm) {
                dg += parity_sign(g_size - __builtin_popcountll(v)) * phi[v]->grad.comp[k][c];
                if (v == 0)
                    break;
            }
            face_sum += parity_sign(s_size + 1) * dg * cval * vf;
        }
        acc.push_back(face_sum);
    }
    return pairwise_sum(acc) / static_cast<double>(ctx.grid().cells());
}

/// One realization's sample of e . A^j e: j! sum over j-clusters (diameter <= rho).
inline double cluster_sample(RealizationContext& ctx, int j, double rho, ClusterRoute route, std::size_t budget,
                             std::uint64_t subsample_seed, std::size_t* clusters = nullptr, bool* subsampled = nullptr)
{
    if (j < 0)
        throw ParameterError("cluster coefficient order must be nonnegative");
    if (j == 0)
        return ctx.flux(IndexSet{});
    ctx.guard(static_cast<std::size_t>(j));
    const ProximityGraph graph(ctx.cloud(), ctx.cloud().all_labels(), rho);
    const auto sample = sample_clusters(graph, static_cast<std::size_t>(j), budget, subsample_seed);
    std::vector<double> terms;
    terms.reserve(sample.clusters.size());
    for (const auto& f : sample.clusters)
        terms.push_back(route == ClusterRoute::formula ? formula_term(ctx, f) : ctx.delta_flux(f));
    if (clusters)
        *clusters = sample.total;
    if (subsampled)
        *subsampled = sample.subsampled;
    return factorial(j) * sample.weight * pairwise_sum(terms);
}

/// Monte Carlo estimate of the j-th Taylor coefficient e . A^j e at p = 0.
inline CoefficientEstimate cluster_coefficient(const ContextFactory& setup, int j, const MCParams& mc,
                                               ClusterRoute route = ClusterRoute::formula)
{
    setup.validate();
    const Seed seed{mc.seed};
    const double rho = mc.rho(setup.solver.T);
    std::vector<std::size_t> counts(mc.N, 0);
    std::vector<char> sub(mc.N, 0);
    auto table = collect(mc, [&](std::size_t i) {
        auto ctx = setup.context_for(seed, i);
        bool s = false;
        const double v = cluster_sample(ctx, j, rho, route, mc.cluster_budget, seed.derive("clusters", i),
                                        &counts[i], &s);
        sub[i] = s;
        return std::vector<double>{v};
    });
    CoefficientEstimate r;
    r.value = table.column(0);
    r.failures = table.failures;
    double tot = 0.0;
    for (std::size_t i = 0; i < mc.N; ++i) {
        tot += static_cast<double>(counts[i]);
        r.subsampled = r.subsampled || sub[i];
    }
    r.clusters_per_sample = tot / static_cast<double>(mc.N);
    return r;
}

/// Several orders on shared realizations (one context per realization).
inline std::vector<CoefficientEstimate> cluster_coefficients(const ContextFactory& setup, const std::vector<int>& orders,
                                                             const MCParams& mc,
                                                             ClusterRoute route = ClusterRoute::formula)
{
    setup.validate();
    const Seed seed{mc.seed};
    const double rho = mc.rho(setup.solver.T);
    const std::size_t m = orders.size();
    std::vector<std::vector<std::size_t>> counts(mc.N, std::vector<std::size_t>(m, 0));
    std::vector<std::vector<char>> sub(mc.N, std::vector<char>(m, 0));
    auto table = collect(mc, [&](std::size_t i) {
        auto ctx = setup.context_for(seed, i);
        std::vector<double> row;
        for (std::size_t q = 0; q < m; ++q) {
            bool s = false;
            row.push_back(cluster_sample(ctx, orders[q], rho, route, mc.cluster_budget,
                                         seed.child("clusters", i).derive("order", static_cast<std::uint64_t>(orders[q])),
                                         &counts[i][q], &s));
            sub[i][q] = s;
        }
        return row;
    });
    std::vector<CoefficientEstimate> out(m);
    for (std::size_t q = 0; q < m; ++q) {
        out[q].value = table.column(q);
        out[q].failures = table.failures;
        double tot = 0.0;
        for (std::size_t i = 0; i < mc.N; ++i) {
            tot += static_cast<double>(counts[i][q]);
            out[q].subsampled = out[q].subsampled || sub[i][q];
        }
        out[q].clusters_per_sample = tot / static_cast<double>(mc.N);
    }
    return out;
}

/// Monte Carlo estimate of e . A^(p) e: thin, assemble, solve, flux-average.
inline CoefficientEstimate direct_coefficient(const ContextFactory& setup, double p, const MCParams& mc)
{
    setup.validate();
    if (!(p >= 0.0 && p <= 1.0))
        throw ParameterError("direct_coefficient: p must lie in [0,1]");
    const Seed seed{mc.seed};
    auto table = collect(mc, [&](std::size_t i) {
        auto ctx = setup.context_for(seed, i);
        const IndexSet kept = thinning_set(ctx.cloud(), p, seed.derive("thin", i));
        return std::vector<double>{ctx.flux(kept)};
    });
    CoefficientEstimate r;
    r.value = table.column(0);
    r.failures = table.failures;
    return r;
}

/// Full d x d estimate of A^(p) from d directional solves per realization.
inline std::vector<std::vector<Estimate>> direct_matrix(const ContextFactory& setup, double p, const MCParams& mc)
{
    setup.validate();
    const Seed seed{mc.seed};
    const int d = setup.dim;
    auto table = collect(mc, [&](std::size_t i) {
        const PointCloud cloud = setup.sample(seed, i);
        const IndexSet kept = thinning_set(cloud, p, seed.derive("thin", i));
        const auto m = homogenized_matrix(assemble_A(cloud, kept, setup.mat, setup.grid()), setup.solver);
        std::vector<double> row;
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b)
                row.push_back(m[a][b]);
        return row;
    });
    std::vector<std::vector<Estimate>> out(d, std::vector<Estimate>(d));
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
            out[a][b] = table.column(static_cast<std::size_t>(a * d + b));
    return out;
}

// ---------------------------------------------------------------------------
// Taylor remainder
// ---------------------------------------------------------------------------

struct TaylorOptions
{
    std::size_t bound_realizations = 0; ///< realizations used for the bound; 0 skips it
    std::size_t bound_budget = 16;      ///< (k+1)-clusters sampled per realization and u
    double noise_ratio = 0.1;           ///< clean point: stderr < noise_ratio |remainder|
    double min_span = 4.0;              ///< clean points must span this p-ratio
    double slope_slack = 0.3;
};

struct TaylorRow
{
    double p = 0.0;
    Estimate direct;
    Estimate partial;
    Estimate remainder;
    double bound = NAN;
    std::string quality = "skipped";
    bool clean = false;
};

struct TaylorReport
{
    int k = 0;
    std::vector<TaylorRow> rows;
    LinearFit fit;
    Verdict verdict = Verdict::inconclusive;
    std::string note;
    std::size_t failures = 0;
};

/// e . A^{k+1}(u) e for one realization at base E(u), from a sample of (k+1)-clusters.
inline double derivative_at(RealizationContext& ctx, const IndexSet& base, int order, double rho, std::size_t budget,
                            std::uint64_t seed)
{
    const ProximityGraph graph(ctx.cloud(), ctx.cloud().all_labels(), rho);
    const auto sample = sample_clusters(graph, static_cast<std::size_t>(order), budget, seed);
    std::vector<double> terms;
    for (const auto& f : sample.clusters)
        terms.push_back(ctx.delta_flux(f, base.minus(f)));
    return factorial(order) * sample.weight * pairwise_sum(terms);
}

inline void taylor_verdict(TaylorReport& rep, const TaylorOptions& opt)
{
    std::vector<double> xs, ys;
    for (auto& r : rep.rows) {
        const double m = std::abs(r.remainder.mean);
        r.clean = m > 0.0 && r.remainder.stderr_ < opt.noise_ratio * m;
        if (r.clean) {
            xs.push_back(std::log(r.p));
            ys.push_back(std::log(m));
        }
    }
    if (xs.size() < 3 || std::exp(xs.back() - xs.front()) < opt.min_span) {
        rep.verdict = Verdict::inconclusive;
        rep.note = "noise floor: fewer than 3 clean p-values spanning a ratio of " + format_g17(opt.min_span);
        if (xs.size() >= 2)
            rep.fit = fit_line(xs, ys);
        return;
    }
    rep.fit = fit_line(xs, ys);
    rep.verdict = rep.fit.slope >= (rep.k + 1) - opt.slope_slack ? Verdict::pass : Verdict::fail;
}

/// |A^(p) - sum_{j<=k} p^j/j! A^j| on a p-grid, with a log-log slope verdict.
inline TaylorReport taylor_report(const ContextFactory& setup, int k, std::vector<double> p_grid, const MCParams& mc,
                                  const TaylorOptions& opt = {})
{
    setup.validate();
    if (k < 0 || k > 3)
        throw CombinatorialGuardError("taylor_report: k must lie in 0..3");
    std::sort(p_grid.begin(), p_grid.end());
    for (double p : p_grid)
        if (!(p > 0.0 && p <= 1.0))
            throw ParameterError("taylor_report: p must lie in (0,1]");
    const Seed seed{mc.seed};
    const double rho = mc.rho(setup.solver.T);
    const std::size_t np = p_grid.size();
    const std::size_t nb = std::min(opt.bound_realizations, mc.N);

    auto table = collect(mc, [&](std::size_t i) {
        auto ctx = setup.context_for(seed, i);
        const std::uint64_t ts = seed.derive("thin", i);
        const IndexSet top = thinning_set(ctx.cloud(), p_grid.back(), ts);
        const ProximityGraph graph(ctx.cloud(), top, rho);
        std::vector<std::pair<IndexSet, double>> deltas;
        for (int j = 0; j <= k; ++j)
            graph.for_each_clique(static_cast<std::size_t>(j),
                                  [&](const IndexSet& f) { deltas.emplace_back(f, ctx.delta_flux(f)); });
        std::vector<double> row(3 * np + 3 * np, NAN);
        for (std::size_t q = 0; q < np; ++q) {
            const IndexSet e = thinning_set(ctx.cloud(), p_grid[q], ts);
            std::vector<double> part;
            for (const auto& [f, v] : deltas)
                if (f.subset_of(e))
                    part.push_back(v);
            const double partial = pairwise_sum(part);
            const double direct = ctx.flux(e);
            row[q] = direct;
            row[np + q] = partial;
            row[2 * np + q] = direct - partial;
        }
        if (i < nb) {
            // A^{k+1} at u = p/2 and u = p for every p, u = 0 once
            for (std::size_t q = 0; q < np; ++q) {
                const double ps[2] = {0.5 * p_grid[q], p_grid[q]};
                for (int s = 0; s < 2; ++s) {
                    const IndexSet base = thinning_set(ctx.cloud(), ps[s], ts);
                    row[3 * np + 2 * q + static_cast<std::size_t>(s)] =
                        derivative_at(ctx, base, k + 1, rho, opt.bound_budget, seed.child("bound", i).derive("u", 2 * q + s));
                }
            }
        }
        return row;
    });
    // the u = 0 derivative shares realizations with the main table
    std::vector<double> d0;
    if (nb > 0) {
        MCParams sub = mc;
        sub.N = nb;
        auto t0 = collect(sub, [&](std::size_t i) {
            auto ctx = setup.context_for(seed, i);
            return std::vector<double>{derivative_at(ctx, IndexSet{}, k + 1, rho, opt.bound_budget,
                                                     seed.child("bound", i).derive("u0", 0))};
        });
        for (const auto& r : t0.rows)
            d0.push_back(r[0]);
    }

    TaylorReport rep;
    rep.k = k;
    rep.failures = table.failures;
    for (std::size_t q = 0; q < np; ++q) {
        TaylorRow r;
        r.p = p_grid[q];
        r.direct = table.column(q);
        r.partial = table.column(np + q);
        r.remainder = table.column(2 * np + q);
        if (nb > 0) {
            std::vector<double> half, at_p;
            for (std::size_t i = 0; i < std::min(nb, table.rows.size()); ++i) {
                half.push_back(table.rows[i][3 * np + 2 * q]);
                at_p.push_back(table.rows[i][3 * np + 2 * q + 1]);
            }
            const double sup = std::max({std::abs(estimate_from_samples(d0).mean),
                                         std::abs(estimate_from_samples(half).mean),
                                         std::abs(estimate_from_samples(at_p).mean)});
            r.bound = std::pow(r.p, k + 1) / factorial(k + 1) * sup;
            r.quality = std::isfinite(r.bound) ? "estimated" : "skipped";
            if (!std::isfinite(r.bound))
                r.bound = NAN;
        }
        rep.rows.push_back(r);
    }
    taylor_verdict(rep, opt);
    return rep;
}

// ---------------------------------------------------------------------------
// S statistics and growth fits
// ---------------------------------------------------------------------------

struct STable
{
    int max_order = 0;
    std::map<std::pair<int, int>, Estimate> cells; ///< (j, k) -> S_j^k
    std::size_t failures = 0;
};

/// Labels adjacent (within rho) to every member of g, excluding g itself.
inline IndexSet common_neighbors(const PointCloud& cloud, const IndexSet& g, double rho)
{
    std::vector<Label> out;
    const double r2 = rho * rho;
    for (const auto& p : cloud.points) {
        if (g.contains(p.label))
            continue;
        bool ok = true;
        for (Label l : g)
            if (cloud.box.distance2(p.x, cloud.at(l).x) > r2) {
                ok = false;
                break;
            }
        if (ok)
            out.push_back(p.label);
    }
    return IndexSet(std::move(out));
}

/// One realization of S_j^k = sum_{|G|=k} < |sum_{|F|=j, F n G = empty} grad delta^{F u G} phi|^2 >.
inline double s_sample(RealizationContext& ctx, int j, int k, double rho)
{
    ctx.guard(static_cast<std::size_t>(j + k));
    const ProximityGraph all(ctx.cloud(), ctx.cloud().all_labels(), rho);
    std::vector<double> per_g;
    all.for_each_clique(static_cast<std::size_t>(k), [&](const IndexSet& g) {
        const IndexSet cand = g.empty() ? ctx.cloud().all_labels() : common_neighbors(ctx.cloud(), g, rho);
        const ProximityGraph sub(ctx.cloud(), cand, rho);
        GradientField v(ctx.grid().dim(), ctx.grid().cells());
        bool any = false;
        sub.for_each_clique(static_cast<std::size_t>(j), [&](const IndexSet& f) {
            v.axpy(1.0, ctx.delta(f.unite(g)));
            any = true;
        });
        per_g.push_back(any ? v.mean_square() : 0.0);
    });
    return pairwise_sum(per_g);
}

inline STable s_statistic_table(const ContextFactory& setup, int max_order, const MCParams& mc)
{
    setup.validate();
    if (max_order < 0 || max_order > static_cast<int>(setup.context.subset_cap))
        throw CombinatorialGuardError("s_statistic_table: order exceeds the subset cap");
    const Seed seed{mc.seed};
    const double rho = mc.rho(setup.solver.T);
    std::vector<std::pair<int, int>> idx;
    for (int n = 0; n <= max_order; ++n)
        for (int j = n; j >= 0; --j)
            idx.emplace_back(j, n - j);
    auto table = collect(mc, [&](std::size_t i) {
        auto ctx = setup.context_for(seed, i);
        std::vector<double> row;
        for (const auto& [j, k] : idx)
            row.push_back(s_sample(ctx, j, k, rho));
        return row;
    });
    STable t;
    t.max_order = max_order;
    t.failures = table.failures;
    for (std::size_t c = 0; c < idx.size(); ++c)
        t.cells[idx[c]] = table.column(c);
    return t;
}

inline Estimate s_statistic(const ContextFactory& setup, int j, int k, const MCParams& mc)
{
    setup.validate();
    const Seed seed{mc.seed};
    const double rho = mc.rho(setup.solver.T);
    auto table = collect(mc, [&](std::size_t i) {
        auto ctx = setup.context_for(seed, i);
        return std::vector<double>{s_sample(ctx, j, k, rho)};
    });
    return table.column(0);
}

struct GevreyFit
{
    double C = 0.0;           ///< smallest C with |A^j| - 3 se <= j!^2 C^j for all usable j
    double C_ls = 0.0;        ///< exp(slope) of the least-squares line through log(|A^j|/j!^2)
    LinearFit fit;
    std::vector<int> usable;
    double curvature = 0.0;   ///< largest second difference of log(|A^j|/j!^2)
    double curvature_tol = 0.0;
    Verdict verdict = Verdict::inconclusive;
    std::string note;
};

/// Growth check of |A^j| against j!^2 C^j for j >= 1 (index = j in `coeffs`).
inline GevreyFit gevrey_fit(const std::vector<Estimate>& coeffs, double n_sigma = 3.0)
{
    GevreyFit g;
    bool all_zero = coeffs.size() > 1;
    for (std::size_t j = 1; j < coeffs.size(); ++j)
        all_zero = all_zero && coeffs[j].mean == 0.0 && coeffs[j].stderr_ == 0.0;
    if (all_zero) {
        g.verdict = Verdict::pass;
        g.note = "all coefficients vanish";
        return g;
    }
    std::vector<double> xs, ys, sig;
    for (std::size_t j = 1; j < coeffs.size(); ++j) {
        const double m = std::abs(coeffs[j].mean);
        const double w = factorial(static_cast<int>(j)) * factorial(static_cast<int>(j));
        const double hi = (m + n_sigma * coeffs[j].stderr_) / w;
        if (std::isfinite(hi) && hi > 0)
            g.C = std::max(g.C, std::pow(hi, 1.0 / static_cast<double>(j)));
        if (m > n_sigma * coeffs[j].stderr_ && m > 0) {
            g.usable.push_back(static_cast<int>(j));
            xs.push_back(static_cast<double>(j));
            ys.push_back(std::log(m / w));
            sig.push_back(coeffs[j].stderr_ / m);
        }
    }
    if (!std::isfinite(g.C)) {
        g.verdict = Verdict::fail;
        g.note = "non-finite coefficient";
        return g;
    }
    if (xs.size() < 3) {
        g.verdict = Verdict::inconclusive;
        g.note = "fewer than 3 usable coefficients";
        if (xs.size() >= 2)
            g.fit = fit_line(xs, ys);
        return g;
    }
    g.fit = fit_line(xs, ys);
    g.C_ls = std::exp(g.fit.slope);
    bool ok = true;
    g.curvature = -INFINITY;
    for (std::size_t i = 1; i + 1 < xs.size(); ++i) {
        if (xs[i + 1] - xs[i] != 1.0 || xs[i] - xs[i - 1] != 1.0)
            continue;
        const double d2 = ys[i + 1] - 2.0 * ys[i] + ys[i - 1];
        const double tol = n_sigma * std::sqrt(sig[i + 1] * sig[i + 1] + 4 * sig[i] * sig[i] + sig[i - 1] * sig[i - 1]);
        g.curvature = std::max(g.curvature, d2);
        g.curvature_tol = std::max(g.curvature_tol, tol);
        if (d2 > tol)
            ok = false;
    }
    g.verdict = ok ? Verdict::pass : Verdict::fail;
    if (!ok)
        g.note = "super-linear growth of log(|A^j|/j!^2)";
    return g;
}

struct EnvelopeFit
{
    double C = 0.0;       ///< smallest C with S_j^k - 3 se <= j! C^{j+k} over all cells with j + k >= 1
    std::vector<double> order_max; ///< max_{j+k=n} log(S_j^k / j!) for n = 1..max_order
    double curvature = 0.0;
    double curvature_tol = 0.0;
    bool envelope_ok = true;
    Verdict verdict = Verdict::inconclusive;
    std::string note;
};

inline EnvelopeFit s_envelope_fit(const STable& t, double n_sigma = 3.0)
{
    EnvelopeFit f;
    bool all_zero = true;
    for (const auto& [jk, e] : t.cells)
        if (jk.first + jk.second >= 1)
            all_zero = all_zero && e.mean == 0.0;
    if (all_zero) {
        f.verdict = Verdict::pass;
        f.note = "all statistics vanish";
        return f;
    }
    for (const auto& [jk, e] : t.cells) {
        const int n = jk.first + jk.second;
        if (n == 0)
            continue;
        const double lo = std::max(0.0, e.mean - n_sigma * e.stderr_) / factorial(jk.first);
        if (lo > 0)
            f.C = std::max(f.C, std::pow(lo, 1.0 / n));
    }
    for (const auto& [jk, e] : t.cells) {
        const int n = jk.first + jk.second;
        if (n == 0)
            continue;
        const double env = factorial(jk.first) * std::pow(f.C, n);
        if (e.mean > env * (1 + 1e-12) + n_sigma * e.stderr_)
            f.envelope_ok = false;
    }
    std::vector<double> sig;
    for (int n = 1; n <= t.max_order; ++n) {
        double best = -INFINITY, s = 0.0;
        for (const auto& [jk, e] : t.cells)
            if (jk.first + jk.second == n && e.mean > 0) {
                const double v = std::log(e.mean / factorial(jk.first));
                if (v > best) {
                    best = v;
                    s = e.stderr_ / e.mean;
                }
            }
        f.order_max.push_back(best);
        sig.push_back(s);
    }
    std::size_t finite = 0;
    for (double v : f.order_max)
        finite += std::isfinite(v) ? 1 : 0;
    if (finite < 3) {
        f.verdict = f.envelope_ok ? Verdict::inconclusive : Verdict::fail;
        f.note = "fewer than 3 nonzero orders";
        return f;
    }
    bool ok = f.envelope_ok;
    f.curvature = -INFINITY;
    for (std::size_t i = 1; i + 1 < f.order_max.size(); ++i) {
        if (!std::isfinite(f.order_max[i - 1]) || !std::isfinite(f.order_max[i]) || !std::isfinite(f.order_max[i + 1]))
            continue;
        const double d2 = f.order_max[i + 1] - 2 * f.order_max[i] + f.order_max[i - 1];
        const double tol = n_sigma * std::sqrt(sig[i + 1] * sig[i + 1] + 4 * sig[i] * sig[i] + sig[i - 1] * sig[i - 1]);
        f.curvature = std::max(f.curvature, d2);
        f.curvature_tol = std::max(f.curvature_tol, tol);
        if (d2 > tol)
            ok = false;
    }
    f.verdict = ok ? Verdict::pass : Verdict::fail;
    if (!ok)
        f.note = f.envelope_ok ? "super-geometric growth across orders" : "cell above envelope";
    return f;
}

// ---------------------------------------------------------------------------
// JC inequality
// ---------------------------------------------------------------------------

/// Set function R(F) = sum_{n in F} exp(-kappa |x_n - x|), anchored at the evaluation point x.
struct LocalFunctionalSpec
{
    enum class Kind { exponential, zero } kind = Kind::exponential;
    double kappa = 1.0;
    /// Value of R on the empty set; anything but 0 violates the hypothesis.
    double empty_value = 0.0;

    double term(double distance) const
    {
        return kind == Kind::zero ? 0.0 : std::exp(-kappa * distance);
    }
};

namespace detail {

/// sum_{|G|=b, G subset pool} | sum_{|F|=c, F subset pool \ G} R(F u G) |^2 for additive R
/// with pool size m, s1 = sum r, s2 = sum r^2.
inline double jc_quadratic(double m, double s1, double s2, int b, int c)
{
    const long M = static_cast<long>(m);
    const double A = binomial(M - b, c);
    const double B = binomial(M - b - 1, c - 1);
    const double n_g = binomial(M, b);
    const double sum_r = binomial(M - 1, b - 1) * s1;
    const double sum_r2 = binomial(M - 1, b - 1) * s2 + binomial(M - 2, b - 2) * (s1 * s1 - s2);
    const double d = A - B;
    return d * d * sum_r2 + 2.0 * d * B * s1 * sum_r + B * B * s1 * s1 * n_g;
}

} // namespace detail

struct JcSample
{
    double lhs = 0.0;
    double rhs = 0.0;
};

/// Both sides of the inequality for one cloud, averaged over grid cell centers.
inline JcSample jc_sample(const PointCloud& cloud, const Grid& grid, const LocalFunctionalSpec& R, int a, int b, int c)
{
    const std::size_t np = cloud.size();
    JcSample out;
    std::vector<double> lhs_x, rhs_x, r(np);
    for (std::size_t cell = 0; cell < grid.cells(); ++cell) {
        const Vec x = grid.center(cell);
        double s1 = 0.0, s2 = 0.0;
        std::vector<Label> near;
        for (std::size_t i = 0; i < np; ++i) {
            const double dist = cloud.box.distance(cloud.points[i].x, x);
            r[i] = R.term(dist);
            s1 += r[i];
            s2 += r[i] * r[i];
            if (dist < inclusion_radius)
                near.push_back(static_cast<Label>(i));
        }
        rhs_x.push_back(detail::jc_quadratic(static_cast<double>(np), s1, s2, b, c));
        double lhs = 0.0;
        if (near.size() >= static_cast<std::size_t>(a)) {
            const IndexSet nset(near);
            const ProximityGraph any(cloud, nset, 2.0 * cloud.box.max_distance() + 1.0);
            any.for_each_clique(static_cast<std::size_t>(a), [&](const IndexSet& h) {
                double h1 = 0.0, h2 = 0.0;
                for (Label l : h) {
                    h1 += r[l];
                    h2 += r[l] * r[l];
                }
                lhs += detail::jc_quadratic(static_cast<double>(np - h.size()), s1 - h1, s2 - h2, b, c);
            });
        }
        lhs_x.push_back(lhs);
    }
    out.lhs = pairwise_sum(lhs_x) / static_cast<double>(grid.cells());
    out.rhs = pairwise_sum(rhs_x) / static_cast<double>(grid.cells());
    return out;
}

/// Brute-force version of jc_sample at a single evaluation point (for checking the closed form).
inline JcSample jc_bruteforce(const PointCloud& cloud, const Vec& x, const LocalFunctionalSpec& R, int a, int b, int c)
{
    const IndexSet all = cloud.all_labels();
    auto rf = [&](const IndexSet& f) {
        double s = 0.0;
        for (Label l : f)
            s += R.term(cloud.box.distance(cloud.at(l).x, x));
        return s;
    };
    auto subsets_of_size = [&](const IndexSet& pool, int size, auto&& fn) {
        for_each_subset(pool, [&](const IndexSet& s) {
            if (static_cast<int>(s.size()) == size)
                fn(s);
        });
    };
    JcSample out;
    subsets_of_size(all, b, [&](const IndexSet& g) {
        double inner = 0.0;
        subsets_of_size(all.minus(g), c, [&](const IndexSet& f) { inner += rf(f.unite(g)); });
        out.rhs += inner * inner;
    });
    subsets_of_size(all, a, [&](const IndexSet& h) {
        for (Label l : h)
            if (!(cloud.box.distance(cloud.at(l).x, x) < inclusion_radius))
                return;
        subsets_of_size(all.minus(h), b, [&](const IndexSet& g) {
            double inner = 0.0;
            subsets_of_size(all.minus(h).minus(g), c, [&](const IndexSet& f) { inner += rf(f.unite(g)); });
            out.lhs += inner * inner;
        });
    });
    return out;
}

struct JcResult
{
    Estimate lhs;
    Estimate rhs;
    double ratio = 0.0;        ///< a! lhs / rhs
    double ratio_stderr = 0.0; ///< delta method
};

inline JcResult lemma_jc_ratio(const ContextFactory& setup, const LocalFunctionalSpec& R, int a, int b, int c,
                               const MCParams& mc)
{
    setup.validate();
    if (a < 1 || b < 1 || c < 1)
        throw ParameterError("lemma_jc_ratio: a, b, c must be at least 1");
    if (static_cast<std::size_t>(a + b + c) > setup.context.subset_cap)
        throw CombinatorialGuardError("lemma_jc_ratio: a + b + c exceeds the subset cap");
    if (R.empty_value != 0.0)
        throw ContractError("lemma_jc_ratio: R(empty) must vanish");
    const Seed seed{mc.seed};
    const Grid grid = setup.grid();
    auto table = collect(mc, [&](std::size_t i) {
        const auto s = jc_sample(setup.sample(seed, i), grid, R, a, b, c);
        return std::vector<double>{s.lhs, s.rhs};
    });
    JcResult r;
    r.lhs = table.column(0);
    r.rhs = table.column(1);
    if (r.rhs.mean == 0.0)
        return r;
    const double af = factorial(a);
    r.ratio = af * r.lhs.mean / r.rhs.mean;
    // covariance of the two columns
    const double n = static_cast<double>(table.rows.size());
    std::vector<double> cov;
    for (const auto& row : table.rows)
        cov.push_back((row[0] - r.lhs.mean) * (row[1] - r.rhs.mean));
    const double c01 = n > 1 ? pairwise_sum(cov) / (n - 1) / n : 0.0;
    const double rl = r.lhs.mean != 0.0 ? r.lhs.stderr_ / r.lhs.mean : 0.0;
    const double rr = r.rhs.stderr_ / r.rhs.mean;
    const double cross = r.lhs.mean != 0.0 ? c01 / (r.lhs.mean * r.rhs.mean) : 0.0;
    r.ratio_stderr = std::abs(r.ratio) * std::sqrt(std::max(0.0, rl * rl + rr * rr - 2 * cross));
    return r;
}

// ---------------------------------------------------------------------------
// Convergence sweeps
// ---------------------------------------------------------------------------

enum class SweepAxis { T, h, L, N, n };

inline const char* to_string(SweepAxis a)
{
    switch (a) {
    case SweepAxis::T: return "T";
    case SweepAxis::h: return "h";
    case SweepAxis::L: return "L";
    case SweepAxis::N: return "N";
    case SweepAxis::n: return "n";
    }
    return "?";
}

inline SweepAxis parse_axis(const std::string& s)
{
    if (s == "T") return SweepAxis::T;
    if (s == "h") return SweepAxis::h;
    if (s == "L") return SweepAxis::L;
    if (s == "N") return SweepAxis::N;
    if (s == "n") return SweepAxis::n;
    throw ParameterError("unknown sweep axis '" + s + "' (expected T, h, L, N or n)");
}

struct SweepRow
{
    double value = 0.0;
    Estimate estimate;
};

struct SweepTable
{
    SweepAxis axis = SweepAxis::T;
    std::vector<SweepRow> rows;
    std::vector<double> differences; ///< |est_{i+1} - est_i|
    LinearFit stderr_fit;            ///< log stderr vs log N (N axis only)
    Verdict verdict = Verdict::inconclusive;
    std::string note;
};

/// Apply one axis value to a setup / MC pair. For L the cell count keeps the
/// spacing fixed; for h the grid spacing follows when it would be coarser than h.
inline void apply_axis(SweepAxis axis, double v, ContextFactory& s, MCParams& mc)
{
    switch (axis) {
    case SweepAxis::T: s.solver.T = v; break;
    case SweepAxis::h: s.h = v; break;
    case SweepAxis::L: {
        const double dx = s.L / static_cast<double>(s.n);
        s.L = v;
        s.n = std::lround(v / dx);
        break;
    }
    case SweepAxis::N: mc.N = static_cast<std::size_t>(std::llround(v)); break;
    case SweepAxis::n: s.n = std::lround(v); break;
    }
}

/// Verdict on a column of estimates: successive differences must not grow
/// beyond their combined noise; on the N axis stderr must scale as N^{-1/2}.
inline void sweep_verdict(SweepTable& t, double n_sigma = 3.0)
{
    t.differences.clear();
    for (std::size_t i = 1; i < t.rows.size(); ++i)
        t.differences.push_back(std::abs(t.rows[i].estimate.mean - t.rows[i - 1].estimate.mean));
    if (t.axis == SweepAxis::N) {
        std::vector<double> xs, ys;
        for (const auto& r : t.rows)
            if (r.estimate.stderr_ > 0) {
                xs.push_back(std::log(r.value));
                ys.push_back(std::log(r.estimate.stderr_));
            }
        if (xs.size() < 2) {
            t.verdict = Verdict::inconclusive;
            t.note = "fewer than 2 N values with nonzero stderr";
            return;
        }
        t.stderr_fit = fit_line(xs, ys);
        t.verdict = std::abs(t.stderr_fit.slope + 0.5) <= 0.1 ? Verdict::pass : Verdict::fail;
        t.note = "stderr slope " + format_g17(t.stderr_fit.slope) + " (target -0.5 within 20%)";
        return;
    }
    if (t.differences.size() < 2) {
        t.verdict = t.rows.empty() ? Verdict::inconclusive : Verdict::pass;
        t.note = "fewer than 3 points";
        return;
    }
    bool ok = true;
    for (std::size_t i = 1; i < t.differences.size(); ++i) {
        const auto& a = t.rows[i - 1].estimate;
        const auto& b = t.rows[i].estimate;
        const auto& c = t.rows[i + 1].estimate;
        const double noise = n_sigma * std::sqrt(a.stderr_ * a.stderr_ + 2 * b.stderr_ * b.stderr_ + c.stderr_ * c.stderr_);
        if (t.differences[i] > t.differences[i - 1] + noise)
            ok = false;
    }
    t.verdict = ok ? Verdict::pass : Verdict::fail;
    if (!ok)
        t.note = "successive differences grow beyond the noise floor";
}

/// Direct coefficient at thinning p (or cluster coefficient of order j when j >= 0) along an axis.
inline SweepTable convergence_sweep(SweepAxis axis, std::vector<double> values, const ContextFactory& base, const MCParams& mc,
                                    double p = 1.0, int j = -1)
{
    for (std::size_t i = 1; i < values.size(); ++i)
        if (!(values[i] > values[i - 1]) && !(values[i] < values[i - 1]))
            throw ParameterError("convergence_sweep: values must be strictly monotone");
    if (values.size() >= 3) {
        const bool up = values[1] > values[0];
        for (std::size_t i = 1; i < values.size(); ++i)
            if ((values[i] > values[i - 1]) != up)
                throw ParameterError("convergence_sweep: values must be monotone");
    }
    SweepTable t;
    t.axis = axis;
    for (double v : values) {
        ContextFactory s = base;
        MCParams m = mc;
        apply_axis(axis, v, s, m);
        SweepRow r;
        r.value = v;
        r.estimate = j >= 0 ? cluster_coefficient(s, j, m).value : direct_coefficient(s, p, m).value;
        t.rows.push_back(r);
    }
    sweep_verdict(t);
    return t;
}

} // namespace clex
