#include <gtest/gtest.h>

#include <thread>

#include "clex/clusters.hpp"
#include "clex/difference_calculus.hpp"

using namespace clex;

namespace {

RealizationContext make_1d(std::vector<double> xs, double L = 40.0, long n = 400, double T = 4.0,
                           ContextOptions opt = {}, MaterialPair mat = MaterialPair::isotropic(1, 1.0, 4.0))
{
    std::vector<Vec> v;
    for (double x : xs)
        v.push_back(Vec{x, 0, 0});
    const Box box{1, L, true};
    SolverParams p;
    p.T = T;
    return RealizationContext(PointCloud::from_positions(box, v), mat, Grid(box, n), p, opt);
}

RealizationContext make_2d(std::uint64_t seed, ContextOptions opt = {}, double T = 4.0, double L = 24.0, long n = 96)
{
    const Box box{2, L, true};
    SolverParams p;
    p.T = T;
    return RealizationContext(sample_poisson(0.15, box, seed), MaterialPair::isotropic(2, 1.0, 4.0), Grid(box, n), p,
                              opt);
}

} // namespace

TEST(Context, EmptySetWithConstantA1IsNull)
{
    auto ctx = make_1d({5, 12});
    EXPECT_EQ(ctx.corrector({})->grad.max_abs(), 0.0);
    EXPECT_DOUBLE_EQ(ctx.flux({}), 1.0);
}

TEST(Context, FullSetMatchesDirectSolve)
{
    auto ctx = make_1d({5, 5.8, 12, 30});
    const auto all = ctx.cloud().all_labels();
    const auto direct = solve_massive(assemble_A(ctx.cloud(), all, ctx.materials(), ctx.grid()), ctx.solver());
    EXPECT_EQ(ctx.corrector(all)->grad.max_abs_difference(direct.grad), 0.0);
    EXPECT_EQ(ctx.flux(all), direct.flux);
}

TEST(Context, CacheHitIsIdentical)
{
    auto ctx = make_1d({5, 12});
    const auto a = ctx.corrector({0});
    const auto b = ctx.corrector({0});
    EXPECT_EQ(a.get(), b.get());
    EXPECT_EQ(ctx.cache_stats().hits, 1u);
}

TEST(Context, OrderOneDifference)
{
    auto ctx = make_1d({5, 12});
    auto d = ctx.delta({1});
    auto expect = ctx.corrector({1})->grad;
    expect.axpy(-1.0, ctx.corrector({})->grad);
    EXPECT_EQ(d.max_abs_difference(expect), 0.0);
    const auto with_e = ctx.delta({}, {}, true);
    EXPECT_DOUBLE_EQ(with_e.comp[0][3], 1.0);
}

TEST(Context, ZeroContrastDifferencesVanish)
{
    auto ctx = make_1d({5, 5.5, 12}, 40, 400, 4, {}, MaterialPair::isotropic(1, 2.0, 2.0));
    EXPECT_EQ(ctx.delta({0}).max_abs(), 0.0);
    EXPECT_EQ(ctx.delta({0, 1, 2}).max_abs(), 0.0);
    EXPECT_EQ(ctx.delta_flux({0, 1}), 0.0);
}

TEST(Context, RecursiveCompositionMatchesClosedForm)
{
    auto ctx = make_1d({5, 5.7, 7, 20});
    const IndexSet h{3};
    // delta^{0}(delta^{1} phi^H) = delta^{1} phi^{H u {0}} - delta^{1} phi^H
    auto composed = ctx.delta({1}, h.unite({0}));
    composed.axpy(-1.0, ctx.delta({1}, h));
    const auto closed = ctx.delta({0, 1}, h);
    const double scale = ctx.delta({}, {}, true).max_abs();
    EXPECT_LE(composed.max_abs_difference(closed), 4 * ctx.solver().tolerance * scale);
}

TEST(Context, GuardsAndContracts)
{
    ContextOptions opt;
    opt.subset_cap = 2;
    auto ctx = make_1d({5, 6, 7}, 40, 400, 4, opt);
    EXPECT_THROW(ctx.delta({0, 1, 2}), CombinatorialGuardError);
    EXPECT_THROW(ctx.delta({0, 1}, {2}), CombinatorialGuardError);
    EXPECT_THROW(ctx.delta({0}, {0}), ContractError);
    EXPECT_THROW(ctx.corrector({9}), LookupError);
}

TEST(Binomial, IdentityWithinBudget)
{
    auto ctx = make_2d(3);
    ASSERT_GE(ctx.cloud().size(), 4u);
    const auto r0 = check_binomial(ctx, {}, {0}, {1});
    EXPECT_EQ(r0.residual, 0.0);
    EXPECT_TRUE(check_binomial(ctx, {0}, {}, {1}).ok());
    const auto r = check_binomial(ctx, {0, 1}, {2}, {3});
    EXPECT_TRUE(r.ok()) << r.residual << " > " << r.budget;
    EXPECT_THROW(check_binomial(ctx, {0}, {0}, {}), ContractError);
}

TEST(Separation, DecaysWithGap)
{
    const double T = 4.0;
    auto touching = make_1d({20.0, 22.0}, 80, 800, T);
    auto far = make_1d({20.0, 22.0 + 10.0 * std::sqrt(T)}, 80, 800, T);
    const auto s0 = separation_decay(touching, {0, 1});
    const auto s1 = separation_decay(far, {0, 1});
    EXPECT_NEAR(s0.gap, 0.0, 1e-12);
    EXPECT_LE(s1.value, 1e-3 * s0.value);
    const double single = touching.l2_norm(touching.delta({0}));
    EXPECT_GT(s0.value, 0.01 * single);
    EXPECT_LT(s0.value, 10.0 * single);
    EXPECT_THROW(separation_decay(touching, {0}), ContractError);
}

TEST(PartialSum, CompleteExpansionIsExact)
{
    auto ctx = make_1d({5, 5.5, 6.2});
    const auto full = cluster_corrector_partial(ctx, 1.0, 3, 1, 100.0);
    EXPECT_EQ(full.thinned.size(), 3u);
    EXPECT_LT(full.error_l2, 1e-8);
    const auto none = cluster_corrector_partial(ctx, 0.0, 2, 1, 100.0);
    EXPECT_TRUE(none.thinned.empty());
    EXPECT_EQ(none.field.max_abs_difference(ctx.corrector({})->grad), 0.0);
}

TEST(PartialSum, ErrorDecreasesWithOrder)
{
    const Box box{1, 200.0, true};
    SolverParams p;
    p.T = 9;
    RealizationContext ctx(sample_discretized(0.1, 0.4, box, 5), MaterialPair::isotropic(1, 1.0, 4.0), Grid(box, 2000),
                           p);
    double prev = INFINITY;
    for (int k = 0; k <= 2; ++k) {
        const auto s = cluster_corrector_partial(ctx, 0.3, k, 9, default_truncation_radius(p.T));
        EXPECT_LT(s.error_l2, prev) << k;
        prev = s.error_l2;
    }
}

TEST(Cache, LeastRecentlyUsedEviction)
{
    ContextOptions opt;
    opt.cache_cells = 1000;
    auto ctx = make_1d({5, 12, 20, 30}, 40, 400, 4, opt);
    ctx.corrector({0});
    ctx.corrector({1});
    ctx.corrector({0});
    ctx.corrector({2}); // evicts {1}
    auto st = ctx.cache_stats();
    EXPECT_EQ(st.entries, 2u);
    EXPECT_EQ(st.evictions, 1u);
    EXPECT_LE(st.cells, 1000u);
    const auto misses = st.misses;
    ctx.corrector({0});
    EXPECT_EQ(ctx.cache_stats().misses, misses);
    ctx.corrector({1});
    EXPECT_EQ(ctx.cache_stats().misses, misses + 1);
}

TEST(Cache, ConcurrentAccessIsConsistent)
{
    auto ctx = make_2d(8, {}, 4.0, 16.0, 48);
    const std::size_t m = std::min<std::size_t>(ctx.cloud().size(), 6);
    std::vector<std::vector<double>> flux(4, std::vector<double>(m));
    std::vector<std::thread> pool;
    for (int t = 0; t < 4; ++t)
        pool.emplace_back([&, t] {
            for (std::size_t i = 0; i < m; ++i)
                flux[t][i] = ctx.flux(IndexSet{static_cast<Label>((i + t) % m)});
        });
    for (auto& th : pool)
        th.join();
    for (int t = 1; t < 4; ++t)
        for (std::size_t i = 0; i < m; ++i)
            EXPECT_EQ(flux[t][i], flux[0][(i + t) % m]);
}

TEST(Window, AgreesWithFullSolve)
{
    ContextOptions win;
    win.window = true;
    win.window_c1 = 2.0;
    const double T = 0.25;
    auto full = make_2d(11, {}, T, 40.0, 160);
    auto local = make_2d(11, win, T, 40.0, 160);
    ASSERT_GE(full.cloud().size(), 3u);
    // interacting pairs are compared against their own difference field; for
    // separated pairs the exact difference vanishes and the corrector sets the scale
    std::vector<IndexSet> near, far;
    const auto all = full.cloud().all_labels();
    for (std::size_t i = 0; i < all.size(); ++i)
        for (std::size_t j = i + 1; j < all.size(); ++j) {
            const IndexSet f{all[i], all[j]};
            (set_diameter(full.cloud(), f) < 3.0 ? near : far).push_back(f);
        }
    ASSERT_FALSE(near.empty());
    ASSERT_FALSE(far.empty());
    for (const IndexSet& f : {IndexSet{0}, near.front(), near.back()}) {
        const auto a = full.delta(f);
        const auto b = local.delta(f);
        EXPECT_GT(a.max_abs(), 1e-4) << f;
        EXPECT_LE(a.max_abs_difference(b), 1e-6 * a.max_abs()) << f;
    }
    const IndexSet f = far.front();
    EXPECT_LE(full.delta(f).max_abs_difference(local.delta(f)), 1e-6 * full.corrector(f)->grad.max_abs()) << f;
    EXPECT_GT(diagnostics().window_solves.load(), 0);
}

TEST(Clusters, CliqueCountsMatchBruteForce)
{
    const Box box{2, 20.0, true};
    const auto cloud = sample_poisson(0.03, box, 2);
    const double rho = 6.0;
    const ProximityGraph g(cloud, cloud.all_labels(), rho);
    for (std::size_t j = 0; j <= 3; ++j) {
        std::size_t brute = 0;
        const auto all = cloud.all_labels();
        if (all.size() <= 20)
            for_each_subset(all, [&](const IndexSet& s) {
                if (s.size() == j && set_diameter(cloud, s) <= rho)
                    ++brute;
            });
        else
            GTEST_SKIP() << "cloud too large for brute force";
        EXPECT_EQ(g.count_cliques(j), brute) << j;
    }
}

TEST(Clusters, ReservoirSample)
{
    const Box box{1, 100.0, true};
    const auto cloud = sample_poisson(0.5, box, 1);
    const ProximityGraph g(cloud, cloud.all_labels(), 10.0);
    const auto all = sample_clusters(g, 2, 0, 1);
    EXPECT_FALSE(all.subsampled);
    EXPECT_EQ(all.clusters.size(), all.total);
    const auto some = sample_clusters(g, 2, 10, 1);
    EXPECT_TRUE(some.subsampled);
    EXPECT_EQ(some.clusters.size(), 10u);
    EXPECT_DOUBLE_EQ(some.weight, static_cast<double>(some.total) / 10.0);
    EXPECT_EQ(some.clusters, sample_clusters(g, 2, 10, 1).clusters);
    EXPECT_THROW(ProximityGraph(cloud, cloud.all_labels(), 0.0), ParameterError);
}

TEST(Clusters, TruncationRadiusDefault)
{
    EXPECT_NEAR(default_truncation_radius(100.0), 10.0 * std::log(1e6), 1e-12);
    const auto c = PointCloud::from_positions(Box{1, 10, true}, {Vec{1, 0, 0}, Vec{4, 0, 0}, Vec{5, 0, 0}});
    EXPECT_NEAR(set_diameter(c, {0, 1, 2}), 4.0, 1e-14);
    EXPECT_EQ(min_gap(c, {0, 1, 2}), 0.0);
    EXPECT_NEAR(min_gap(c, {0, 1}), 1.0, 1e-14);
}
