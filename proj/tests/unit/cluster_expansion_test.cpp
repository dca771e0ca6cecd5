#include <gtest/gtest.h>

#include <cmath>

#include "clex/cluster_expansion.hpp"
#include "clex/oracle1d.hpp"

using namespace clex;

namespace {

ContextFactory small_1d(double lambda = 0.2, double L = 40.0, long n = 400, double T = 16.0)
{
    ContextFactory f;
    f.dim = 1;
    f.L = L;
    f.n = n;
    f.lambda = lambda;
    f.h = 0.1;
    f.solver.T = T;
    return f;
}

MCParams mc_of(std::size_t N, std::uint64_t seed = 1)
{
    MCParams mc;
    mc.N = N;
    mc.seed = seed;
    return mc;
}

Estimate exact(double v, double se = 0.0)
{
    Estimate e;
    e.mean = v;
    e.stderr_ = se;
    e.samples = 10;
    return e;
}

} // namespace

TEST(ClusterCoefficient, FormulaAndMoebiusRoutesAgree)
{
    const auto f = small_1d(0.25);
    const Seed seed{3};
    const double rho = MCParams{}.rho(f.solver.T);
    for (std::uint64_t i = 0; i < 3; ++i) {
        for (int j = 1; j <= 3; ++j) {
            auto a = f.context_for(seed, i);
            auto b = f.context_for(seed, i);
            const double x = cluster_sample(a, j, rho, ClusterRoute::formula, 0, 0);
            const double y = cluster_sample(b, j, rho, ClusterRoute::moebius, 0, 0);
            EXPECT_NEAR(x, y, 1e-7 * (1.0 + std::abs(y))) << "j=" << j << " realization " << i;
        }
    }
}

TEST(ClusterCoefficient, OrderZeroIsA1Exactly)
{
    auto f = small_1d();
    f.mat = MaterialPair::isotropic(1, 1.5, 4.0);
    const auto c = cluster_coefficient(f, 0, mc_of(5));
    EXPECT_DOUBLE_EQ(c.value.mean, 1.5);
    EXPECT_EQ(c.value.stderr_, 0.0);
}

TEST(ClusterCoefficient, ZeroContrastGivesZero)
{
    auto f = small_1d(0.3);
    f.mat = MaterialPair::isotropic(1, 2.0, 2.0);
    const auto cs = cluster_coefficients(f, {0, 1, 2, 3}, mc_of(4));
    EXPECT_DOUBLE_EQ(cs[0].value.mean, 2.0);
    for (int j = 1; j <= 3; ++j) {
        EXPECT_EQ(cs[j].value.mean, 0.0);
        EXPECT_EQ(cs[j].value.stderr_, 0.0);
    }
    std::vector<Estimate> v;
    for (const auto& c : cs)
        v.push_back(c.value);
    const auto g = gevrey_fit(v);
    EXPECT_EQ(g.verdict, Verdict::pass);
    EXPECT_EQ(g.C, 0.0);
}

TEST(ClusterCoefficient, FirstOrderMatchesLayeredOracle)
{
    // finite T biases the estimate upward by a few percent at this size
    const auto f = small_1d(0.1, 400.0, 4000, 1600.0);
    const auto c = cluster_coefficient(f, 1, mc_of(40, 11));
    const double want = oracle1d::coefficient(1, f.lambda, 1.0, 4.0);
    EXPECT_NEAR(c.value.mean, want, 3.0 * c.value.stderr_ + 0.05 * want);
    EXPECT_GT(c.value.stderr_, 0.0);
    EXPECT_FALSE(c.subsampled);
    EXPECT_GT(c.clusters_per_sample, 0.0);
}

TEST(ClusterCoefficient, WorkerCountDoesNotChangeResults)
{
    const auto f = small_1d(0.25);
    auto m1 = mc_of(6, 5);
    auto m3 = m1;
    m3.workers = 3;
    const auto a = cluster_coefficients(f, {1, 2}, m1);
    const auto b = cluster_coefficients(f, {1, 2}, m3);
    for (std::size_t q = 0; q < a.size(); ++q) {
        EXPECT_EQ(a[q].value.mean, b[q].value.mean);
        EXPECT_EQ(a[q].value.stderr_, b[q].value.stderr_);
    }
}

TEST(ClusterCoefficient, NegativeOrderRejected)
{
    EXPECT_THROW(cluster_coefficient(small_1d(), -1, mc_of(2)), ParameterError);
}

TEST(DirectCoefficient, EmptyThinningIsA1)
{
    const auto d = direct_coefficient(small_1d(0.3), 0.0, mc_of(5));
    EXPECT_DOUBLE_EQ(d.value.mean, 1.0);
    EXPECT_THROW(direct_coefficient(small_1d(), 1.5, mc_of(2)), ParameterError);
}

TEST(DirectCoefficient, FullThinningMatchesManualFlux)
{
    const auto f = small_1d(0.3);
    const auto mc = mc_of(4, 9);
    const auto d = direct_coefficient(f, 1.0, mc);
    std::vector<double> xs;
    const Seed seed{mc.seed};
    for (std::uint64_t i = 0; i < mc.N; ++i) {
        auto ctx = f.context_for(seed, i);
        xs.push_back(ctx.flux(ctx.cloud().all_labels()));
    }
    EXPECT_NEAR(d.value.mean, estimate_from_samples(xs).mean, 1e-12);
}

TEST(DirectCoefficient, MatchesLayeredOracle)
{
    const auto f = small_1d(0.3, 2000.0, 20000, 1e4);
    const auto d = direct_coefficient(f, 1.0, mc_of(30, 2));
    const double want = oracle1d::value(0.3, 1.0, 4.0);
    EXPECT_NEAR(d.value.mean, want, 0.02 * want);
}

TEST(Taylor, RemainderOfFullExpansionVanishesAtOrderZeroWithoutInclusions)
{
    const auto f = small_1d(0.0);
    const auto rep = taylor_report(f, 1, {0.25, 0.5, 1.0}, mc_of(3));
    for (const auto& r : rep.rows) {
        EXPECT_EQ(r.remainder.mean, 0.0);
        EXPECT_EQ(r.quality, "skipped");
    }
    EXPECT_EQ(rep.verdict, Verdict::inconclusive);
}

TEST(Taylor, RemainderIsDirectMinusPartial)
{
    const auto f = small_1d(0.3);
    TaylorOptions opt;
    opt.bound_realizations = 2;
    opt.bound_budget = 4;
    const auto rep = taylor_report(f, 1, {0.2, 0.4, 0.8}, mc_of(4), opt);
    ASSERT_EQ(rep.rows.size(), 3u);
    for (const auto& r : rep.rows) {
        EXPECT_NEAR(r.remainder.mean, r.direct.mean - r.partial.mean, 1e-12);
        EXPECT_EQ(r.quality, "estimated");
        EXPECT_TRUE(std::isfinite(r.bound));
    }
    EXPECT_LT(std::abs(rep.rows[0].remainder.mean), std::abs(rep.rows[2].remainder.mean));
}

TEST(Taylor, ArgumentChecks)
{
    EXPECT_THROW(taylor_report(small_1d(), 4, {0.5}, mc_of(2)), CombinatorialGuardError);
    EXPECT_THROW(taylor_report(small_1d(), 1, {0.0, 0.5}, mc_of(2)), ParameterError);
}

TEST(TaylorVerdict, SlopeFromSyntheticRemainders)
{
    TaylorReport rep;
    rep.k = 1;
    for (double p : {0.1, 0.2, 0.4, 0.8}) {
        TaylorRow r;
        r.p = p;
        r.remainder = exact(0.3 * p * p, 1e-4 * p * p);
        rep.rows.push_back(r);
    }
    taylor_verdict(rep, TaylorOptions{});
    EXPECT_EQ(rep.verdict, Verdict::pass);
    EXPECT_NEAR(rep.fit.slope, 2.0, 1e-9);

    for (auto& r : rep.rows)
        r.remainder = exact(0.3 * r.p, 1e-4 * r.p);
    taylor_verdict(rep, TaylorOptions{});
    EXPECT_EQ(rep.verdict, Verdict::fail);

    for (auto& r : rep.rows)
        r.remainder = exact(1e-3, 1e-3);
    taylor_verdict(rep, TaylorOptions{});
    EXPECT_EQ(rep.verdict, Verdict::inconclusive);
}

TEST(SStatistic, ConstantBaseHasNullLeadingCell)
{
    const auto s = s_statistic(small_1d(0.3), 0, 0, mc_of(3));
    EXPECT_EQ(s.mean, 0.0);
}

TEST(SStatistic, CheckerboardLeadingCellWithinEnergyBound)
{
    auto f = small_1d(0.3, 40.0, 400, 16.0);
    f.mat.a1_field = MaterialPair::checkerboard(1, 1.0, 3.0, 2.0);
    const auto s = s_statistic(f, 0, 0, mc_of(3));
    EXPECT_GT(s.mean, 0.0);
    EXPECT_LE(s.mean, 2.0);
}

TEST(SStatistic, ZeroContrastTableVanishes)
{
    auto f = small_1d(0.3);
    f.mat = MaterialPair::isotropic(1, 2.0, 2.0);
    const auto t = s_statistic_table(f, 2, mc_of(2));
    EXPECT_EQ(t.cells.size(), 6u);
    for (const auto& [jk, e] : t.cells)
        EXPECT_EQ(e.mean, 0.0) << jk.first << "," << jk.second;
    EXPECT_EQ(s_envelope_fit(t).verdict, Verdict::pass);
}

TEST(SStatistic, OrderBeyondCapRejected)
{
    EXPECT_THROW(s_statistic_table(small_1d(), 99, mc_of(1)), CombinatorialGuardError);
}

TEST(GevreyFit, ExactGevreySequencePasses)
{
    std::vector<Estimate> c{exact(1.0)};
    for (int j = 1; j <= 4; ++j) {
        const double v = factorial(j) * factorial(j) * std::pow(0.5, j);
        c.push_back(exact(j % 2 ? v : -v, 0.01 * v));
    }
    const auto g = gevrey_fit(c);
    EXPECT_EQ(g.verdict, Verdict::pass);
    EXPECT_NEAR(g.C_ls, 0.5, 1e-9);
    EXPECT_GE(g.C, 0.5);
    EXPECT_EQ(g.usable.size(), 4u);
}

TEST(GevreyFit, SuperGevreyGrowthFails)
{
    std::vector<Estimate> c{exact(1.0)};
    for (int j = 1; j <= 4; ++j) {
        const double v = std::pow(factorial(j), 4);
        c.push_back(exact(v, 1e-3 * v));
    }
    EXPECT_EQ(gevrey_fit(c).verdict, Verdict::fail);
}

TEST(GevreyFit, UnresolvedCoefficientsAreInconclusive)
{
    std::vector<Estimate> c{exact(1.0), exact(0.1, 0.01), exact(0.01, 0.02), exact(0.001, 0.01)};
    EXPECT_EQ(gevrey_fit(c).verdict, Verdict::inconclusive);
}

TEST(EnvelopeFit, GeometricTablePasses)
{
    STable t;
    t.max_order = 4;
    for (int n = 0; n <= 4; ++n)
        for (int j = 0; j <= n; ++j) {
            const double v = n == 0 ? 0.0 : factorial(j) * std::pow(0.7, n) * (j == 0 ? 0.5 : 1.0);
            t.cells[{j, n - j}] = exact(v, 0.01 * v);
        }
    const auto f = s_envelope_fit(t);
    EXPECT_EQ(f.verdict, Verdict::pass);
    EXPECT_TRUE(f.envelope_ok);
    EXPECT_NEAR(f.C, 0.7, 0.05);
}

TEST(EnvelopeFit, FactorialSquaredGrowthFails)
{
    STable t;
    t.max_order = 4;
    for (int n = 1; n <= 4; ++n)
        t.cells[{n, 0}] = exact(std::pow(factorial(n), 3), 1e-6);
    EXPECT_EQ(s_envelope_fit(t).verdict, Verdict::fail);
}

TEST(Jc, ClosedFormMatchesBruteForce)
{
    const Box box{1, 20.0, true};
    const auto cloud = PointCloud::from_positions(box, {Vec{3.0, 0, 0}, Vec{3.6, 0, 0}, Vec{4.4, 0, 0},
                                                        Vec{9.0, 0, 0}, Vec{17.0, 0, 0}, Vec{18.2, 0, 0}});
    LocalFunctionalSpec R;
    R.kappa = 0.7;
    for (long n : {2L, 4L}) {
        const Grid grid(box, n);
        for (auto [a, b, c] : {std::tuple{1, 1, 1}, {2, 1, 1}, {1, 2, 1}, {2, 1, 2}}) {
            double lhs = 0.0, rhs = 0.0;
            for (std::size_t cell = 0; cell < grid.cells(); ++cell) {
                const auto s = jc_bruteforce(cloud, grid.center(cell), R, a, b, c);
                lhs += s.lhs / static_cast<double>(grid.cells());
                rhs += s.rhs / static_cast<double>(grid.cells());
            }
            const auto fast = jc_sample(cloud, grid, R, a, b, c);
            EXPECT_NEAR(fast.lhs, lhs, 1e-9 * (1 + lhs)) << n << ": " << a << b << c;
            EXPECT_NEAR(fast.rhs, rhs, 1e-9 * (1 + rhs)) << n << ": " << a << b << c;
            if (n == 4 && a == 1) {
                EXPECT_GT(lhs, 0.0);
            }
        }
    }
}

TEST(Jc, ZeroFunctionalGivesZeroRatio)
{
    LocalFunctionalSpec R;
    R.kind = LocalFunctionalSpec::Kind::zero;
    const auto r = lemma_jc_ratio(small_1d(0.3, 20.0, 20), R, 1, 1, 1, mc_of(3));
    EXPECT_EQ(r.ratio, 0.0);
    EXPECT_EQ(r.rhs.mean, 0.0);
}

TEST(Jc, RatioBelowOneForSmallOrders)
{
    LocalFunctionalSpec R;
    const auto r = lemma_jc_ratio(small_1d(0.3, 20.0, 20), R, 1, 1, 1, mc_of(8));
    EXPECT_GT(r.ratio, 0.0);
    EXPECT_LE(r.ratio, 1.0 + 3.0 * r.ratio_stderr);
}

TEST(Jc, ArgumentChecks)
{
    LocalFunctionalSpec R;
    EXPECT_THROW(lemma_jc_ratio(small_1d(), R, 0, 1, 1, mc_of(1)), ParameterError);
    EXPECT_THROW(lemma_jc_ratio(small_1d(), R, 4, 4, 4, mc_of(1)), CombinatorialGuardError);
    R.empty_value = 1.0;
    EXPECT_THROW(lemma_jc_ratio(small_1d(), R, 1, 1, 1, mc_of(1)), ContractError);
}

TEST(Collect, ToleratesFailuresWithinBudget)
{
    auto mc = mc_of(200);
    const auto t = collect(mc, [](std::size_t i) -> std::vector<double> {
        if (i == 7)
            throw ConvergenceError("x", NAN, 0);
        return {static_cast<double>(i)};
    });
    EXPECT_EQ(t.failures, 1u);
    EXPECT_EQ(t.rows.size(), 199u);
}

TEST(Collect, AbortsBeyondFailureBudget)
{
    auto mc = mc_of(50);
    EXPECT_THROW(collect(mc,
                         [](std::size_t i) -> std::vector<double> {
                             if (i == 7)
                                 throw ConvergenceError("x", NAN, 0);
                             return {1.0};
                         }),
                 ConvergenceError);
}

TEST(Collect, OtherErrorsPropagate)
{
    EXPECT_THROW(collect(mc_of(3), [](std::size_t) -> std::vector<double> { throw ShapeError("bad"); }), ShapeError);
}

TEST(Sweep, StderrScalingOnNAxis)
{
    SweepTable t;
    t.axis = SweepAxis::N;
    for (double n : {100.0, 400.0, 1600.0})
        t.rows.push_back({n, exact(1.0, 0.3 / std::sqrt(n))});
    sweep_verdict(t);
    EXPECT_EQ(t.verdict, Verdict::pass);
    EXPECT_NEAR(t.stderr_fit.slope, -0.5, 1e-9);

    for (auto& r : t.rows)
        r.estimate.stderr_ = 0.3 / r.value;
    sweep_verdict(t);
    EXPECT_EQ(t.verdict, Verdict::fail);
}

TEST(Sweep, GrowingDifferencesFail)
{
    SweepTable t;
    t.axis = SweepAxis::T;
    const double v[] = {1.0, 1.01, 1.1, 1.5};
    for (int i = 0; i < 4; ++i)
        t.rows.push_back({static_cast<double>(i + 1), exact(v[i], 1e-4)});
    sweep_verdict(t);
    EXPECT_EQ(t.verdict, Verdict::fail);

    const double w[] = {1.5, 1.1, 1.01, 1.001};
    for (int i = 0; i < 4; ++i)
        t.rows[i].estimate = exact(w[i], 1e-4);
    sweep_verdict(t);
    EXPECT_EQ(t.verdict, Verdict::pass);
}

TEST(Sweep, ZeroContrastTSweepIsConstant)
{
    auto f = small_1d(0.3);
    f.mat = MaterialPair::isotropic(1, 2.0, 2.0);
    const auto t = convergence_sweep(SweepAxis::T, {4.0, 16.0, 64.0}, f, mc_of(3));
    ASSERT_EQ(t.rows.size(), 3u);
    for (const auto& r : t.rows)
        EXPECT_NEAR(r.estimate.mean, 2.0, 1e-12);
    EXPECT_EQ(t.verdict, Verdict::pass);
}

TEST(Sweep, NonMonotoneValuesRejected)
{
    EXPECT_THROW(convergence_sweep(SweepAxis::T, {4.0, 16.0, 8.0}, small_1d(), mc_of(1)), ParameterError);
    EXPECT_THROW(parse_axis("q"), ParameterError);
}
