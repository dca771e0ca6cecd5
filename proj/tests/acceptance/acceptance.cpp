// Acceptance suite: one verdict line per criterion.
//
//   clex_acceptance [--only 1,3,9] [--workers K]
//
// Exit status is 1 if any criterion fails; inconclusive verdicts do not fail the run.
#include <algorithm>
#include <chrono>
#include <complex>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "clex/clex.hpp"

using namespace clex;

namespace {

unsigned g_workers = 1;

struct Outcome
{
    Verdict verdict = Verdict::fail;
    std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...)
{
    char buf[1024];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

const char* label(Verdict v)
{
    switch (v) {
    case Verdict::pass: return "PASS";
    case Verdict::inconclusive: return "INCONCLUSIVE";
    case Verdict::fail: return "FAIL";
    }
    return "?";
}

MCParams mc_of(std::size_t N, std::uint64_t seed)
{
    MCParams mc;
    mc.N = N;
    mc.seed = seed;
    mc.workers = g_workers;
    return mc;
}

ContextFactory oned(double L, long n, double h, double lambda, double T)
{
    ContextFactory f;
    f.dim = 1;
    f.L = L;
    f.n = n;
    f.h = h;
    f.lambda = lambda;
    f.solver.T = T;
    f.mat = MaterialPair::isotropic(1, 1.0, 4.0);
    return f;
}

// Derivatives of the layered closed form by a Cauchy contour integral; an
// independent route to the values returned by oracle1d::derivatives.
double contour_derivative(int j, double alpha, double beta)
{
    const double r = 0.07;
    const int m = 256;
    std::complex<double> acc = 0.0;
    for (int k = 0; k < m; ++k) {
        const double t = 2.0 * std::numbers::pi * k / m;
        const std::complex<double> v = std::exp(-2.0 * std::polar(r, t));
        acc += 1.0 / (v / alpha + (1.0 - v) / beta) * std::polar(1.0, -j * t);
    }
    return acc.real() / m * factorial(j) / std::pow(r, j);
}

// ---------------------------------------------------------------------------

Outcome criterion1()
{
    Outcome o{Verdict::pass, ""};
    for (double lambda : {0.1, 0.3}) {
        const auto f = oned(2000.0, 20000, 0.1, lambda, 1e4);
        const auto d = direct_coefficient(f, 1.0, mc_of(200, 101));
        const double want = oracle1d::value(lambda, 1.0, 4.0);
        const double rel = std::abs(d.value.mean - want) / want;
        if (!(rel <= 0.02))
            o.verdict = Verdict::fail;
        o.detail += fmt("lambda=%g: %.6f +- %.6f vs %.6f (rel %.2e, tol 2e-2); ", lambda, d.value.mean,
                        d.value.stderr_, want, rel);
    }
    return o;
}

Outcome criterion2()
{
    Outcome o{Verdict::pass, ""};
    const double lambda = 0.1;
    const auto f = oned(2000.0, 20000, 0.01, lambda, 1e4);
    const auto fd = oracle1d::derivatives(2, 1.0, 4.0);
    const auto cs = cluster_coefficients(f, {1, 2}, mc_of(50, 202));
    for (int j = 1; j <= 2; ++j) {
        const double indep = contour_derivative(j, 1.0, 4.0);
        if (std::abs(indep - fd[j]) > 1e-9 * std::abs(fd[j]))
            o.verdict = Verdict::fail;
        const double want = std::pow(lambda, j) * fd[j];
        const auto& e = cs[j - 1].value;
        const double z = std::abs(e.mean - want) / e.stderr_;
        if (!(z <= 3.0))
            o.verdict = Verdict::fail;
        o.detail += fmt("A^%d = %.6f +- %.6f vs %.6f (%.2f stderr; oracle routes differ by %.1e); ", j, e.mean,
                        e.stderr_, want, z, std::abs(indep - fd[j]));
    }
    return o;
}

Outcome criterion3()
{
    Outcome o{Verdict::pass, ""};
    // inclusion-exclusion on 100 clouds, |H| <= 6 drawn around a random point so the balls overlap
    {
        const Box box{2, 6.0, true};
        const Grid g(box, 48);
        const auto mat = MaterialPair::isotropic(2, 1.0, 4.0);
        const Seed seed{303};
        double worst = 0.0;
        std::size_t clouds = 0, nontrivial = 0;
        bool partition = true;
        for (std::uint64_t s = 0; clouds < 100; ++s) {
            const auto c = sample_poisson(0.4, box, seed.derive("ie-cloud", s));
            if (c.size() < 2)
                continue;
            auto rng = seed.engine("ie-pick", s);
            const Label centre = static_cast<Label>(rng() % c.size());
            std::vector<std::pair<double, Label>> by_dist;
            for (const auto& p : c.points)
                by_dist.emplace_back(box.distance(p.x, c.at(centre).x), p.label);
            std::sort(by_dist.begin(), by_dist.end());
            const std::size_t nh = 1 + rng() % std::min<std::size_t>(6, c.size() - 1);
            std::vector<Label> h;
            for (std::size_t i = 0; i < nh; ++i)
                h.push_back(by_dist[i].second);
            const IndexSet hs(h), gs{by_dist[nh].second};
            const auto r = verify_inclusion_exclusion(c, hs, gs, g, mat);
            worst = std::max(worst, r.max_residual());
            partition = partition && verify_disjoint_partition(c, hs, g);
            nontrivial += nh >= 2 && set_diameter(c, hs) < 2.0 * inclusion_radius ? 1 : 0;
            ++clouds;
        }
        if (worst != 0.0 || !partition)
            o.verdict = Verdict::fail;
        o.detail += fmt("inclusion-exclusion: max residual %g over %zu clouds (%zu with overlapping H), partition %s; ",
                        worst, clouds, nontrivial, partition ? "ok" : "broken");
    }
    // binomial identity on 100 draws of disjoint (F, G, H) from nearby points
    {
        ContextFactory f;
        f.dim = 2;
        f.L = 12.0;
        f.n = 48;
        f.lambda = 0.3;
        f.h = 0.1;
        f.solver.T = 4.0;
        f.mat = MaterialPair::isotropic(2, 1.0, 4.0);
        const Seed seed{304};
        double worst_ratio = 0.0;
        std::size_t draws = 0;
        for (std::uint64_t s = 0; draws < 100; ++s) {
            auto ctx = f.context_for(seed, s);
            const auto& c = ctx.cloud();
            if (c.size() < 5)
                continue;
            auto rng = seed.engine("binomial-pick", s);
            const Label centre = static_cast<Label>(rng() % c.size());
            std::vector<std::pair<double, Label>> by_dist;
            for (const auto& p : c.points)
                by_dist.emplace_back(c.box.distance(p.x, c.at(centre).x), p.label);
            std::sort(by_dist.begin(), by_dist.end());
            const std::size_t nf = 1 + rng() % 2, ng = rng() % 2, nh = rng() % 3;
            std::vector<Label> fl, gl, hl;
            std::size_t q = 0;
            for (std::size_t i = 0; i < nf; ++i)
                fl.push_back(by_dist[q++].second);
            for (std::size_t i = 0; i < ng; ++i)
                gl.push_back(by_dist[q++].second);
            for (std::size_t i = 0; i < nh; ++i)
                hl.push_back(by_dist[q++].second);
            const auto r = check_binomial(ctx, IndexSet(fl), IndexSet(gl), IndexSet(hl));
            worst_ratio = std::max(worst_ratio, r.budget > 0 ? r.residual / r.budget : (r.residual > 0 ? INFINITY : 0.0));
            ++draws;
        }
        if (!(worst_ratio <= 1.0))
            o.verdict = Verdict::fail;
        o.detail += fmt("binomial identity: worst residual/budget %.3g over %zu draws", worst_ratio, draws);
    }
    return o;
}

Outcome criterion4()
{
    const long checks = diagnostics().energy_checks.load();
    const long bad = diagnostics().energy_violations.load();
    Outcome o;
    o.verdict = checks > 0 && bad == 0 ? Verdict::pass : Verdict::fail;
    o.detail = fmt("%ld energy checks over all suites above, %ld violations", checks, bad);
    return o;
}

bool g_clt_ok = false;

Outcome criterion5()
{
    ContextFactory f;
    f.dim = 2;
    f.L = 32.0;
    f.n = 128;
    f.h = 0.1;
    f.lambda = 0.2;
    f.solver.T = 100.0;
    f.mat = MaterialPair::isotropic(2, 1.0, 4.0);
    const std::vector<double> ps{0.05, 0.075, 0.1, 0.15, 0.2, 0.3, 0.4};
    const auto rep = taylor_report(f, 2, ps, mc_of(30, 505));
    Outcome o;
    o.verdict = rep.verdict;
    std::size_t clean = 0;
    for (const auto& r : rep.rows)
        clean += r.clean ? 1 : 0;
    o.detail = fmt("k=2, %zu/%zu clean p-values, slope %.3f (need >= 2.7)", clean, rep.rows.size(), rep.fit.slope);
    if (rep.verdict == Verdict::inconclusive) {
        o.detail += "; " + rep.note;
        if (!g_clt_ok) {
            o.verdict = Verdict::fail;
            o.detail += "; noise floor not backed by the N-sweep of criterion 8";
        } else {
            o.detail += "; stderr scaling confirmed by the N-sweep of criterion 8";
        }
    }
    for (const auto& r : rep.rows)
        o.detail += fmt("; p=%g R=%.3e+-%.1e", r.p, r.remainder.mean, r.remainder.stderr_);
    return o;
}

Outcome criterion6()
{
    const auto f = oned(60.0, 600, 0.1, 0.3, 4.0);
    Outcome o{Verdict::pass, ""};

    const auto stab = s_statistic_table(f, 4, mc_of(100, 606));
    const auto env = s_envelope_fit(stab);
    o.detail += fmt("S envelope: C=%.4f, all cells within 3 stderr %s, order curvature %.3f (tol %.3f): %s; ", env.C,
                    env.envelope_ok ? "yes" : "no", env.curvature, env.curvature_tol, to_string(env.verdict));

    const auto cs = cluster_coefficients(f, {0, 1, 2, 3}, mc_of(400, 607), ClusterRoute::moebius);
    std::vector<Estimate> a;
    for (const auto& c : cs)
        a.push_back(c.value);
    const auto gev = gevrey_fit(a);
    o.detail += fmt("Gevrey: C=%.4f (ls %.4f), curvature %.3f (tol %.3f): %s", gev.C, gev.C_ls, gev.curvature,
                    gev.curvature_tol, to_string(gev.verdict));
    for (int j = 1; j <= 3; ++j)
        o.detail += fmt("; A^%d=%.4f+-%.4f", j, a[j].mean, a[j].stderr_);
    o.verdict = combine(env.verdict, gev.verdict);
    if (!std::isfinite(gev.C) || !std::isfinite(env.C))
        o.verdict = Verdict::fail;
    return o;
}

Outcome criterion7()
{
    const auto f = oned(40.0, 40, 0.5, 0.3, 1.0);
    LocalFunctionalSpec R;
    R.kappa = 1.0;
    const auto s = jc_stability(f, R, {0.5, 0.25, 0.125}, {1, 2, 3}, 1, 1, mc_of(10000, 707));
    Outcome o;
    o.verdict = s.verdict;
    for (std::size_t i = 0; i < s.h.size(); ++i) {
        o.detail += fmt("h=%g:", s.h[i]);
        for (std::size_t k = 0; k < s.a.size(); ++k)
            o.detail += fmt(" a=%d %.4f+-%.4f", s.a[k], s.table[i][k].ratio, s.table[i][k].ratio_stderr);
        o.detail += "; ";
    }
    o.detail += "growth";
    for (double g : s.growth)
        o.detail += fmt(" %.3f", g);
    if (!s.note.empty())
        o.detail += "; " + s.note;
    // reference only: the same ratios for the Poisson process, the h -> 0 limit of P_h
    ContextFactory poisson = f;
    poisson.process = ContextFactory::Process::poisson;
    o.detail += "; Poisson reference";
    for (int a : s.a) {
        const auto r = lemma_jc_ratio(poisson, R, a, 1, 1, mc_of(10000, 708));
        o.detail += fmt(" a=%d %.4f+-%.4f", a, r.ratio, r.ratio_stderr);
    }
    return o;
}

Outcome criterion8()
{
    Outcome o{Verdict::pass, ""};
    {
        const auto f = oned(200.0, 2000, 0.1, 0.3, 400.0);
        const auto t = convergence_sweep(SweepAxis::N, {100, 400, 1600}, f, mc_of(1, 808));
        g_clt_ok = t.verdict == Verdict::pass;
        if (!g_clt_ok)
            o.verdict = Verdict::fail;
        o.detail += fmt("N-sweep stderr slope %.3f (target -0.5 +- 0.1); ", t.stderr_fit.slope);
    }
    {
        const auto f = oned(200.0, 2000, 0.1, 0.3, 25.0);
        auto near = mc_of(40, 809);
        near.rho_trunc = 10.0 * std::sqrt(f.solver.T);
        auto far = near;
        far.rho_trunc = 2.0 * near.rho_trunc;
        const auto a = cluster_coefficients(f, {1, 2}, near);
        const auto b = cluster_coefficients(f, {1, 2}, far);
        for (std::size_t q = 0; q < 2; ++q) {
            const double shift = std::abs(a[q].value.mean - b[q].value.mean);
            if (!(shift < a[q].value.stderr_))
                o.verdict = Verdict::fail;
            o.detail += fmt("rho %g -> %g, A^%zu moves %.2e (stderr %.2e); ", near.rho_trunc, far.rho_trunc, q + 1,
                            shift, a[q].value.stderr_);
        }
    }
    {
        // interacting subsets against their own difference field; separated ones,
        // whose exact difference vanishes, against the corrector
        ContextFactory f;
        f.dim = 2;
        f.L = 40.0;
        f.n = 160;
        f.lambda = 0.15;
        f.h = 0.1;
        f.solver.T = 0.25;
        f.mat = MaterialPair::isotropic(2, 1.0, 4.0);
        ContextFactory w = f;
        w.context.window = true;
        const Seed seed{810};
        double worst = 0.0;
        std::size_t fields = 0;
        for (std::uint64_t s = 0; s < 4; ++s) {
            auto full = f.context_for(seed, s);
            auto local = w.context_for(seed, s);
            const auto& c = full.cloud();
            std::vector<IndexSet> sets;
            for (std::size_t i = 0; i < c.size() && sets.size() < 6; ++i) {
                std::vector<Label> grp{static_cast<Label>(i)};
                for (std::size_t k = 0; k < c.size() && grp.size() < 3; ++k)
                    if (k != i && c.box.distance(c.points[i].x, c.points[k].x) < 2.5)
                        grp.push_back(static_cast<Label>(k));
                sets.push_back(IndexSet(grp));
            }
            if (c.size() >= 2)
                sets.push_back(IndexSet{0, static_cast<Label>(c.size() - 1)});
            for (const auto& fs : sets) {
                const auto a = full.delta(fs);
                const auto b = local.delta(fs);
                const double scale = std::max(a.max_abs(), 1e-3 * full.corrector(fs)->grad.max_abs());
                worst = std::max(worst, a.max_abs_difference(b) / scale);
                ++fields;
            }
        }
        if (!(worst <= 1e-6))
            o.verdict = Verdict::fail;
        o.detail += fmt("window vs full: worst relative difference %.2e over %zu delta fields (tol 1e-6)", worst, fields);
    }
    return o;
}

Outcome criterion9()
{
    struct Triple
    {
        int d;
        double L, lambda, p, h;
    };
    const Triple triples[] = {{1, 100.0, 0.2, 0.3, 0.1}, {2, 8.0, 0.5, 0.5, 0.25}, {2, 10.0, 1.0, 0.7, 0.5}};
    Outcome o{Verdict::pass, ""};
    const std::size_t N = 10000;
    std::uint64_t seed = 909;
    for (const auto& t : triples) {
        ProcessSpec thinned{ProcessSpec::Kind::thinned_discretized, Box{t.d, t.L, true}, t.lambda, t.h, t.p};
        ProcessSpec direct{ProcessSpec::Kind::discretized, Box{t.d, t.L, true}, t.p * t.lambda, t.h, 1.0};
        const auto a = count_statistics(thinned, N, seed++);
        const auto b = count_statistics(direct, N, seed++);
        auto m4 = [](const CountMoments& m) {
            double s = 0.0;
            for (double c : m.counts)
                s += std::pow(c - m.mean, 4);
            return s / static_cast<double>(m.counts.size());
        };
        const double n = static_cast<double>(N);
        const double se_mean = std::sqrt(a.variance / n + b.variance / n);
        const double se_var = std::sqrt((m4(a) - a.variance * a.variance) / n + (m4(b) - b.variance * b.variance) / n);
        const double z_mean = std::abs(a.mean - b.mean) / se_mean;
        const double z_var = std::abs(a.variance - b.variance) / se_var;
        if (!(z_mean <= 3.0 && z_var <= 3.0))
            o.verdict = Verdict::fail;
        o.detail += fmt("(d=%d lambda=%g p=%g h=%g) mean %.3f vs %.3f (%.2f se), var %.3f vs %.3f (%.2f se); ", t.d,
                        t.lambda, t.p, t.h, a.mean, b.mean, z_mean, a.variance, b.variance, z_var);
    }
    return o;
}

} // namespace

int main(int argc, char** argv)
{
    std::set<int> only;
    g_workers = std::max(1u, std::thread::hardware_concurrency());
    for (int i = 1; i < argc; ++i) {
        if (!std::strcmp(argv[i], "--only") && i + 1 < argc) {
            for (const auto& s : split_list(argv[++i]))
                only.insert(std::stoi(s));
        } else if (!std::strcmp(argv[i], "--workers") && i + 1 < argc) {
            g_workers = static_cast<unsigned>(std::stoul(argv[++i]));
        } else {
            std::fprintf(stderr, "usage: %s [--only 1,2,...] [--workers K]\n", argv[0]);
            return 1;
        }
    }

    // 8 runs before 5: an inconclusive remainder slope must be backed by the N-sweep.
    // 4 runs last so it covers every solve above.
    const std::vector<std::pair<int, std::function<Outcome()>>> order{
        {9, criterion9}, {1, criterion1}, {3, criterion3}, {7, criterion7}, {8, criterion8},
        {6, criterion6}, {2, criterion2}, {5, criterion5}, {4, criterion4}};
    const std::map<int, const char*> names{{1, "1D oracle, value"},
                                           {2, "1D oracle, derivatives"},
                                           {3, "exact identities"},
                                           {4, "energy estimate"},
                                           {5, "Taylor remainder slope"},
                                           {6, "Gevrey structure"},
                                           {7, "JC stability"},
                                           {8, "statistical and numerical hygiene"},
                                           {9, "thinning law"}};

    std::map<int, Outcome> results;
    for (const auto& [id, fn] : order) {
        if (!only.empty() && !only.count(id) && id != 4)
            continue;
        if (id == 5 && !only.empty() && !only.count(8))
            std::fprintf(stderr, "note: criterion 5 without 8 cannot back a noise-floor verdict\n");
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {Verdict::fail, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("criterion %d [%s]: %s (%.1f s) %s\n", id, names.at(id), label(o.verdict), secs, o.detail.c_str());
        std::fflush(stdout);
        results[id] = o;
    }

    std::printf("\nsummary\n");
    bool failed = false;
    for (const auto& [id, o] : results) {
        std::printf("  %d %-36s %s\n", id, names.at(id), label(o.verdict));
        failed = failed || o.verdict == Verdict::fail;
    }
    return failed ? 1 : 0;
}
