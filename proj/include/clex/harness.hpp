#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cluster_expansion.hpp"
#include "config.hpp"
#include "oracle1d.hpp"

namespace clex {

inline constexpr const char* artifact_version = "clex 0.1.0";

enum class Kind { direct, cluster, taylor, s_table, jc, sweep, oracle1d, locality };

inline const char* to_string(Kind k)
{
    switch (k) {
    case Kind::direct: return "direct";
    case Kind::cluster: return "cluster";
    case Kind::taylor: return "taylor";
    case Kind::s_table: return "s_table";
    case Kind::jc: return "jc";
    case Kind::sweep: return "sweep";
    case Kind::oracle1d: return "oracle1d";
    case Kind::locality: return "locality";
    }
    return "?";
}

inline Kind parse_kind(const std::string& s)
{
    for (Kind k : {Kind::direct, Kind::cluster, Kind::taylor, Kind::s_table, Kind::jc, Kind::sweep, Kind::oracle1d,
                   Kind::locality})
        if (s == to_string(k))
            return k;
    throw ConfigError("kind", "unknown experiment kind '" + s + "'");
}

/// Typed, validated view of a Config.
struct ExperimentConfig
{
    Config raw;
    Kind kind = Kind::oracle1d;
    std::uint64_t seed = 1;
    std::string out_dir;
    ContextFactory factory;
    MCParams mc;
    double p = 1.0;
    std::vector<double> p_grid;
    std::vector<int> orders;
    int k = 2;
    int max_order = 3;
    TaylorOptions taylor;
    std::vector<int> jc_a;
    int jc_b = 1, jc_c = 1;
    LocalFunctionalSpec jc_R;
    std::vector<double> jc_h;
    SweepAxis axis = SweepAxis::T;
    std::vector<double> sweep_values;
    bool sweep_cluster = false;
    int sweep_j = 1;
    Vec locality_y{0, 0, 0};

    std::string run_id() const { return raw.run_id(); }

    static ExperimentConfig from(const Config& c);
};

namespace detail {

inline bool is_integral(double v, double tol = 1e-9) { return std::abs(v - std::round(v)) <= tol * std::max(1.0, std::abs(v)); }

inline std::vector<int> int_list(const Config& c, const std::string& key, int lo)
{
    std::vector<int> out;
    for (double v : c.list(key)) {
        if (!is_integral(v, 0) || v < lo)
            throw ConfigError(key, "expected integers >= " + std::to_string(lo));
        out.push_back(static_cast<int>(v));
    }
    return out;
}

inline Vec vec_of(const Config& c, const std::string& key, int dim)
{
    const auto xs = c.list(key);
    if (static_cast<int>(xs.size()) != dim)
        throw ConfigError(key, "expected " + std::to_string(dim) + " components");
    Vec v{0, 0, 0};
    for (int k = 0; k < dim; ++k)
        v[k] = xs[k];
    return v;
}

} // namespace detail

inline ExperimentConfig ExperimentConfig::from(const Config& c)
{
    using detail::is_integral;
    ExperimentConfig x;
    x.raw = c;
    x.kind = parse_kind(c.str("kind"));
    x.seed = c.u64("seed");
    x.out_dir = c.str("output.dir");
    if (x.out_dir.empty())
        throw ConfigError("output.dir", "must not be empty");

    auto& f = x.factory;
    const long d = c.integer("physics.d");
    if (d < 1 || d > 3)
        throw ConfigError("physics.d", "must be 1, 2 or 3");
    f.dim = static_cast<int>(d);
    f.L = c.num("physics.L");
    if (!(f.L > 0))
        throw ConfigError("physics.L", "must be positive");
    f.n = c.integer("physics.n");
    if (f.n < 1)
        throw ConfigError("physics.n", "must be positive");
    if (!is_integral(static_cast<double>(f.n) / f.L))
        throw ConfigError("physics.n", "n must be an integer multiple of L (whole cells per unit length)");
    f.h = c.num("physics.h");
    if (!(f.h > 0))
        throw ConfigError("physics.h", "must be positive");
    f.lambda = c.num("physics.lambda");
    if (!(f.lambda >= 0))
        throw ConfigError("physics.lambda", "must be nonnegative");
    const std::string& proc = c.str("physics.process");
    if (proc == "discretized")
        f.process = ContextFactory::Process::discretized;
    else if (proc == "poisson")
        f.process = ContextFactory::Process::poisson;
    else
        throw ConfigError("physics.process", "expected discretized or poisson");
    if (f.process == ContextFactory::Process::discretized) {
        if (!is_integral(f.L / f.h))
            throw ConfigError("physics.h", "L/h must be an integer");
        const double q = f.lambda * std::pow(f.h, f.dim);
        if (q > 1.0)
            throw ConfigError("physics.lambda", "lambda*h^d = " + format_g17(q) + " exceeds 1");
    }
    x.p = c.num("physics.p");
    if (!(x.p >= 0 && x.p <= 1))
        throw ConfigError("physics.p", "must lie in [0,1]");
    x.p_grid = c.list("physics.p_grid");
    for (double p : x.p_grid)
        if (!(p > 0 && p <= 1))
            throw ConfigError("physics.p_grid", "entries must lie in (0,1]");

    const double alpha = c.num("physics.alpha"), beta = c.num("physics.beta");
    if (!(alpha > 0))
        throw ConfigError("physics.alpha", "must be positive");
    if (!(beta > 0))
        throw ConfigError("physics.beta", "must be positive");
    f.mat = MaterialPair::isotropic(f.dim, alpha, beta);

    auto& s = f.solver;
    s.T = c.num("physics.T");
    if (!(s.T > 0))
        throw ConfigError("physics.T", "must be positive");
    s.e = detail::vec_of(c, "physics.e", f.dim);
    double n2 = 0;
    for (int k = 0; k < f.dim; ++k)
        n2 += s.e[k] * s.e[k];
    if (std::abs(n2 - 1.0) > 1e-12)
        throw ConfigError("physics.e", "must be a unit vector");
    s.tolerance = c.num("solver.tolerance");
    if (!(s.tolerance > 0 && s.tolerance < 1))
        throw ConfigError("solver.tolerance", "must lie in (0,1)");
    s.max_iterations = c.integer("solver.max_iterations");
    if (s.max_iterations < 0)
        throw ConfigError("solver.max_iterations", "must be nonnegative");
    const std::string& m = c.str("solver.method");
    if (m == "automatic")
        s.method = SolverMethod::automatic;
    else if (m == "pcg_jacobi")
        s.method = SolverMethod::pcg_jacobi;
    else if (m == "pcg_spectral")
        s.method = SolverMethod::pcg_spectral;
    else if (m == "direct_1d") {
        if (f.dim != 1)
            throw ConfigError("solver.method", "direct_1d requires physics.d = 1");
        s.method = SolverMethod::direct_1d;
    } else
        throw ConfigError("solver.method", "unknown method '" + m + "'");

    f.context.window = c.flag("solver.window");
    f.context.window_c1 = c.num("solver.window_c1");
    if (!(f.context.window_c1 > 0))
        throw ConfigError("solver.window_c1", "must be positive");
    f.context.window_eps = c.num("solver.window_eps");
    if (!(f.context.window_eps > 0 && f.context.window_eps < 1))
        throw ConfigError("solver.window_eps", "must lie in (0,1)");
    const long cap = c.integer("cache.subset_cap");
    if (cap < 1 || cap > 20)
        throw ConfigError("cache.subset_cap", "must lie in 1..20");
    f.context.subset_cap = static_cast<std::size_t>(cap);
    const long cells = c.integer("cache.cells");
    if (cells < 0)
        throw ConfigError("cache.cells", "must be nonnegative");
    f.context.cache_cells = static_cast<std::size_t>(cells);

    auto& mc = x.mc;
    const long N = c.integer("mc.N");
    if (N < 1)
        throw ConfigError("mc.N", "must be at least 1");
    mc.N = static_cast<std::size_t>(N);
    mc.seed = x.seed;
    mc.rho_trunc = c.num("mc.rho_trunc");
    if (mc.rho_trunc != 0 && mc.rho_trunc < 2 * inclusion_radius)
        throw ConfigError("mc.rho_trunc", "smaller than one inclusion diameter");
    mc.confidence = c.num("mc.confidence");
    if (!(mc.confidence > 0 && mc.confidence < 1))
        throw ConfigError("mc.confidence", "must lie in (0,1)");
    const long w = c.integer("mc.workers");
    if (w < 0)
        throw ConfigError("mc.workers", "must be nonnegative");
    mc.workers = static_cast<unsigned>(w);
    const long budget = c.integer("mc.cluster_budget");
    if (budget < 0)
        throw ConfigError("mc.cluster_budget", "must be nonnegative");
    mc.cluster_budget = static_cast<std::size_t>(budget);
    mc.max_failure_fraction = c.num("mc.max_failure_fraction");
    if (!(mc.max_failure_fraction >= 0 && mc.max_failure_fraction < 1))
        throw ConfigError("mc.max_failure_fraction", "must lie in [0,1)");

    x.orders = detail::int_list(c, "expansion.orders", 0);
    x.k = static_cast<int>(c.integer("expansion.k"));
    if (x.k < 0)
        throw ConfigError("expansion.k", "must be nonnegative");
    x.max_order = static_cast<int>(c.integer("expansion.max_order"));
    if (x.max_order < 1)
        throw ConfigError("expansion.max_order", "must be positive");
    const long br = c.integer("taylor.bound_realizations");
    if (br < 0)
        throw ConfigError("taylor.bound_realizations", "must be nonnegative");
    x.taylor.bound_realizations = static_cast<std::size_t>(br);
    const long bb = c.integer("taylor.bound_budget");
    if (bb < 1)
        throw ConfigError("taylor.bound_budget", "must be positive");
    x.taylor.bound_budget = static_cast<std::size_t>(bb);

    x.jc_a = detail::int_list(c, "jc.a", 1);
    x.jc_b = static_cast<int>(c.integer("jc.b"));
    if (x.jc_b < 1)
        throw ConfigError("jc.b", "must be positive");
    x.jc_c = static_cast<int>(c.integer("jc.c"));
    if (x.jc_c < 1)
        throw ConfigError("jc.c", "must be positive");
    x.jc_R.kappa = c.num("jc.kappa");
    if (!(x.jc_R.kappa > 0))
        throw ConfigError("jc.kappa", "must be positive");
    x.jc_h = c.list("jc.h_values");
    for (double h : x.jc_h) {
        if (!(h > 0) || !is_integral(f.L / h))
            throw ConfigError("jc.h_values", "each h must be positive and divide L");
        if (f.lambda * std::pow(h, f.dim) > 1.0)
            throw ConfigError("jc.h_values", "lambda*h^d exceeds 1 for h = " + format_g17(h));
    }

    try {
        x.axis = parse_axis(c.str("sweep.axis"));
    } catch (const ParameterError& e) {
        throw ConfigError("sweep.axis", e.what());
    }
    x.sweep_values = c.list("sweep.values");
    const std::string& target = c.str("sweep.target");
    if (target != "direct" && target != "cluster")
        throw ConfigError("sweep.target", "expected direct or cluster");
    x.sweep_cluster = target == "cluster";
    x.sweep_j = static_cast<int>(c.integer("sweep.j"));
    if (x.sweep_j < 0)
        throw ConfigError("sweep.j", "must be nonnegative");
    if (x.kind == Kind::sweep && x.sweep_values.empty())
        throw ConfigError("sweep.values", "a sweep needs at least one value");
    x.locality_y = detail::vec_of(c, "locality.y", f.dim);

    if (x.kind == Kind::oracle1d && f.dim != 1)
        throw ConfigError("physics.d", "oracle1d requires d = 1");
    if (x.kind == Kind::locality && f.L < 10.0 * std::sqrt(s.T))
        throw ConfigError("physics.L", "locality probe needs L >= 10 sqrt(T)");
    if (x.kind == Kind::taylor && x.p_grid.size() < 2)
        throw ConfigError("physics.p_grid", "a Taylor run needs at least two p values");

    try {
        f.validate();
        mc.validate();
    } catch (const Error& e) {
        throw ConfigError("physics", e.what());
    }
    return x;
}

// ---------------------------------------------------------------------------
// CSV

/// 17 significant digits; non-finite values print as nan / inf.
inline std::string csv_num(double v)
{
    if (std::isnan(v))
        return "nan";
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    return format_g17(v);
}

/// One row of results.csv. Integer fields below zero and NaN axis values print empty.
struct ResultRow
{
    std::string quantity;
    std::string axis;
    double axis_value = NAN;
    double lambda = NAN, T = NAN, h = NAN, L = NAN;
    long n = -1, N = -1;
    int j = -1, k = -1;
    double p = NAN;
    double estimate = NAN, stderr_ = NAN;
};

inline const char* results_header = "run_id,kind,quantity,axis,axis_value,lambda,T,h,L,n,N,j,k,p,estimate,stderr";

inline std::string csv_line(const std::string& run_id, Kind kind, const ResultRow& r)
{
    auto opt = [](double v) { return std::isnan(v) ? std::string() : csv_num(v); };
    auto opti = [](long v) { return v < 0 ? std::string() : std::to_string(v); };
    std::string s = run_id + "," + to_string(kind) + "," + r.quantity + "," + r.axis + "," + opt(r.axis_value) + "," +
                    opt(r.lambda) + "," + opt(r.T) + "," + opt(r.h) + "," + opt(r.L) + "," + opti(r.n) + "," +
                    opti(r.N) + "," + opti(r.j) + "," + opti(r.k) + "," + opt(r.p) + "," + csv_num(r.estimate) + "," +
                    csv_num(r.stderr_);
    return s;
}

/// Minimal comma-separated reader for the files this harness writes (no quoting).
struct CsvTable
{
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const
    {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name)
                return static_cast<int>(i);
        return -1;
    }

    static std::vector<std::string> split(const std::string& line)
    {
        std::vector<std::string> out;
        std::string cur;
        for (char ch : line) {
            if (ch == ',') {
                out.push_back(cur);
                cur.clear();
            } else
                cur += ch;
        }
        out.push_back(cur);
        return out;
    }

    static CsvTable read(const std::filesystem::path& p)
    {
        std::ifstream in(p, std::ios::binary);
        if (!in)
            throw Error("cannot read " + p.string());
        CsvTable t;
        std::string line;
        if (std::getline(in, line))
            t.header = split(line);
        while (std::getline(in, line))
            if (!line.empty())
                t.rows.push_back(split(line));
        return t;
    }
};

// ---------------------------------------------------------------------------
// Run record

struct ManifestEntry
{
    std::string file;
    std::uintmax_t bytes = 0;
    std::string checksum; ///< FNV-1a 64 of the file contents, hex
};

struct RunRecord
{
    std::string run_id;
    std::string version = artifact_version;
    double wall_seconds = 0.0;
    std::vector<std::pair<std::string, double>> stages;
    std::vector<std::string> warnings;
    std::vector<ManifestEntry> manifest;
    Verdict verdict = Verdict::inconclusive;
};

inline std::string file_checksum(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(detail::fnv1a(ss.str())));
    return buf;
}

inline int exit_code(Verdict v)
{
    switch (v) {
    case Verdict::pass: return 0;
    case Verdict::inconclusive: return 2;
    case Verdict::fail: return 1;
    }
    return 1;
}

inline Verdict combine(Verdict a, Verdict b)
{
    if (a == Verdict::fail || b == Verdict::fail)
        return Verdict::fail;
    if (a == Verdict::inconclusive || b == Verdict::inconclusive)
        return Verdict::inconclusive;
    return Verdict::pass;
}

// ---------------------------------------------------------------------------
// JC ratio stability across process resolutions

struct JcStability
{
    std::vector<double> h;
    std::vector<int> a;
    std::vector<std::vector<JcResult>> table; ///< [h][a]
    std::vector<double> growth;                ///< ratio(a+1)/ratio(a) at the finest h
    Verdict verdict = Verdict::inconclusive;
    std::string note;
};

/// Finite ratios, agreement across h within n_sigma combined stderr, and
/// successive growth factors in a that do not themselves increase beyond noise.
inline JcStability jc_stability(const ContextFactory& base, const LocalFunctionalSpec& R, const std::vector<double>& hs,
                                const std::vector<int>& as, int b, int c, const MCParams& mc, double n_sigma = 3.0)
{
    JcStability s;
    s.h = hs;
    s.a = as;
    for (double h : hs) {
        ContextFactory f = base;
        f.h = h;
        std::vector<JcResult> row;
        for (int a : as)
            row.push_back(lemma_jc_ratio(f, R, a, b, c, mc));
        s.table.push_back(std::move(row));
    }
    bool finite = true, stable = true, geometric = true;
    for (const auto& row : s.table)
        for (const auto& r : row)
            finite = finite && std::isfinite(r.ratio) && std::isfinite(r.ratio_stderr) && r.rhs.mean > 0;
    for (std::size_t ai = 0; ai < as.size(); ++ai)
        for (std::size_t i = 0; i < hs.size(); ++i)
            for (std::size_t k = i + 1; k < hs.size(); ++k) {
                const auto& x = s.table[i][ai];
                const auto& y = s.table[k][ai];
                const double se = std::hypot(x.ratio_stderr, y.ratio_stderr);
                if (std::abs(x.ratio - y.ratio) > n_sigma * se)
                    stable = false;
            }
    if (!s.table.empty()) {
        const auto& fine = s.table.back();
        std::vector<double> gse;
        for (std::size_t i = 1; i < fine.size(); ++i) {
            const double g = fine[i].ratio / fine[i - 1].ratio;
            s.growth.push_back(g);
            const double rel = std::hypot(fine[i].ratio_stderr / fine[i].ratio, fine[i - 1].ratio_stderr / fine[i - 1].ratio);
            gse.push_back(std::abs(g) * rel);
        }
        for (std::size_t i = 1; i < s.growth.size(); ++i)
            if (s.growth[i] > s.growth[i - 1] + n_sigma * std::hypot(gse[i], gse[i - 1]))
                geometric = false;
    }
    s.verdict = finite && stable && geometric ? Verdict::pass : Verdict::fail;
    if (!finite)
        s.note = "non-finite ratio";
    else if (!stable)
        s.note = "ratio differs across h beyond noise";
    else if (!geometric)
        s.note = "growth in a faster than geometric";
    return s;
}

// ---------------------------------------------------------------------------
// run / sweep

struct RunOutput
{
    RunRecord record;
    nlohmann::ordered_json report;
    std::vector<ResultRow> rows;
};

namespace detail {

inline ResultRow base_row(const ExperimentConfig& x, const std::string& quantity)
{
    ResultRow r;
    r.quantity = quantity;
    r.lambda = x.factory.lambda;
    r.T = x.factory.solver.T;
    r.h = x.factory.h;
    r.L = x.factory.L;
    r.n = x.factory.n;
    r.N = static_cast<long>(x.mc.N);
    return r;
}

inline nlohmann::ordered_json to_json(const Estimate& e)
{
    return {{"mean", e.mean}, {"stderr", e.stderr_}, {"samples", e.samples}};
}

inline void write_text(const std::filesystem::path& p, const std::string& s)
{
    std::ofstream out(p, std::ios::binary);
    if (!out)
        throw Error("cannot write " + p.string());
    out << s;
}

class StageClock
{
  public:
    explicit StageClock(RunRecord& r) : rec_(r) {}

    template <class Fn>
    auto time(const std::string& name, Fn&& fn)
    {
        const auto t0 = std::chrono::steady_clock::now();
        struct Guard
        {
            RunRecord& rec;
            std::string name;
            std::chrono::steady_clock::time_point t0;
            ~Guard() { rec.stages.emplace_back(name, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()); }
        } g{rec_, name, t0};
        return fn();
    }

  private:
    RunRecord& rec_;
};

} // namespace detail

/// Executes the configured experiment in memory (no files written).
inline RunOutput execute(const ExperimentConfig& x)
{
    RunOutput o;
    o.record.run_id = x.run_id();
    detail::StageClock clock(o.record);
    const long violations0 = diagnostics().energy_violations.load();
    auto& rep = o.report;
    rep["run_id"] = o.record.run_id;
    rep["kind"] = to_string(x.kind);
    rep["seed"] = x.seed;
    Verdict v = Verdict::pass;
    auto warn_failures = [&](std::size_t f) {
        if (f > 0)
            o.record.warnings.push_back(std::to_string(f) + " realization(s) dropped after solver failure");
    };

    switch (x.kind) {
    case Kind::direct:
    case Kind::oracle1d: {
        const auto est = clock.time("direct", [&] { return direct_coefficient(x.factory, x.p, x.mc); });
        warn_failures(est.failures);
        auto r = detail::base_row(x, "direct");
        r.p = x.p;
        r.estimate = est.value.mean;
        r.stderr_ = est.value.stderr_;
        o.rows.push_back(r);
        rep["estimate"] = detail::to_json(est.value);
        rep["half_width"] = est.value.half_width(x.mc.confidence);
        if (x.kind == Kind::oracle1d) {
            const auto& m = x.factory.mat;
            const double exact = oracle1d::value(x.p * x.factory.lambda, m.a1(0, 0), m.a2(0, 0));
            auto ro = detail::base_row(x, "oracle");
            ro.p = x.p;
            ro.estimate = exact;
            ro.stderr_ = 0.0;
            o.rows.push_back(ro);
            const double tol = 0.02 * exact + 3.0 * est.value.stderr_;
            const double err = std::abs(est.value.mean - exact);
            rep["oracle"] = exact;
            rep["abs_error"] = err;
            rep["tolerance"] = tol;
            v = err <= tol ? Verdict::pass : Verdict::fail;
        }
        break;
    }
    case Kind::cluster: {
        const auto est = clock.time("cluster", [&] { return cluster_coefficients(x.factory, x.orders, x.mc); });
        std::vector<Estimate> by_order;
        auto& arr = rep["coefficients"] = nlohmann::ordered_json::array();
        for (std::size_t i = 0; i < x.orders.size(); ++i) {
            warn_failures(i == 0 ? est[i].failures : 0);
            auto r = detail::base_row(x, "cluster");
            r.j = x.orders[i];
            r.estimate = est[i].value.mean;
            r.stderr_ = est[i].value.stderr_;
            o.rows.push_back(r);
            auto e = detail::to_json(est[i].value);
            e["j"] = x.orders[i];
            e["clusters_per_sample"] = est[i].clusters_per_sample;
            e["subsampled"] = est[i].subsampled;
            if (x.factory.dim == 1) {
                const auto& m = x.factory.mat;
                e["oracle"] = oracle1d::coefficient(x.orders[i], x.factory.lambda, m.a1(0, 0), m.a2(0, 0));
            }
            arr.push_back(e);
        }
        std::set<int> have(x.orders.begin(), x.orders.end());
        if (have.count(1) && have.count(2) && have.count(3)) {
            int top = *have.rbegin();
            std::vector<Estimate> co(static_cast<std::size_t>(top + 1));
            bool contiguous = true;
            for (int j = 0; j <= top; ++j) {
                auto it = std::find(x.orders.begin(), x.orders.end(), j);
                if (it == x.orders.end()) {
                    contiguous = contiguous && j == 0;
                    continue;
                }
                co[static_cast<std::size_t>(j)] = est[static_cast<std::size_t>(it - x.orders.begin())].value;
            }
            if (contiguous) {
                const auto g = gevrey_fit(co);
                rep["gevrey"] = {{"C", g.C}, {"C_ls", g.C_ls}, {"verdict", to_string(g.verdict)}, {"note", g.note}};
                v = g.verdict;
            }
        }
        break;
    }
    case Kind::taylor: {
        const auto tr = clock.time("taylor", [&] { return taylor_report(x.factory, x.k, x.p_grid, x.mc, x.taylor); });
        warn_failures(tr.failures);
        auto& arr = rep["rows"] = nlohmann::ordered_json::array();
        for (const auto& row : tr.rows) {
            for (auto [name, e] : {std::pair{"direct", row.direct}, std::pair{"partial", row.partial},
                                   std::pair{"remainder", row.remainder}}) {
                auto r = detail::base_row(x, name);
                r.k = x.k;
                r.p = row.p;
                r.estimate = e.mean;
                r.stderr_ = e.stderr_;
                o.rows.push_back(r);
            }
            arr.push_back({{"p", row.p},
                           {"remainder", row.remainder.mean},
                           {"stderr", row.remainder.stderr_},
                           {"bound_estimate", std::isnan(row.bound) ? nlohmann::ordered_json() : nlohmann::ordered_json(row.bound)},
                           {"quality", row.quality},
                           {"clean", row.clean}});
        }
        rep["slope"] = tr.fit.slope;
        rep["slope_stderr"] = tr.fit.slope_stderr;
        rep["fit_points"] = tr.fit.points;
        rep["note"] = tr.note;
        v = tr.verdict;
        break;
    }
    case Kind::s_table: {
        const auto t = clock.time("s_table", [&] { return s_statistic_table(x.factory, x.max_order, x.mc); });
        warn_failures(t.failures);
        auto& arr = rep["cells"] = nlohmann::ordered_json::array();
        for (const auto& [jk, e] : t.cells) {
            auto r = detail::base_row(x, "s_statistic");
            r.j = jk.first;
            r.k = jk.second;
            r.estimate = e.mean;
            r.stderr_ = e.stderr_;
            o.rows.push_back(r);
            auto j = detail::to_json(e);
            j["j"] = jk.first;
            j["k"] = jk.second;
            arr.push_back(j);
        }
        const auto fit = s_envelope_fit(t);
        rep["envelope"] = {{"C", fit.C}, {"envelope_ok", fit.envelope_ok}, {"note", fit.note}};
        v = fit.verdict;
        break;
    }
    case Kind::jc: {
        const auto s = clock.time("jc", [&] {
            return jc_stability(x.factory, x.jc_R, x.jc_h, x.jc_a, x.jc_b, x.jc_c, x.mc);
        });
        auto& arr = rep["ratios"] = nlohmann::ordered_json::array();
        for (std::size_t i = 0; i < s.h.size(); ++i)
            for (std::size_t a = 0; a < s.a.size(); ++a) {
                const auto& jr = s.table[i][a];
                auto r = detail::base_row(x, "jc_ratio");
                r.h = s.h[i];
                r.j = s.a[a];
                r.estimate = jr.ratio;
                r.stderr_ = jr.ratio_stderr;
                o.rows.push_back(r);
                arr.push_back({{"h", s.h[i]}, {"a", s.a[a]}, {"ratio", jr.ratio}, {"stderr", jr.ratio_stderr}});
            }
        rep["growth"] = s.growth;
        rep["note"] = s.note;
        v = s.verdict;
        break;
    }
    case Kind::sweep: {
        const auto t = clock.time("sweep", [&] {
            return convergence_sweep(x.axis, x.sweep_values, x.factory, x.mc, x.p, x.sweep_cluster ? x.sweep_j : -1);
        });
        for (const auto& row : t.rows) {
            ExperimentConfig y = x;
            MCParams mc = x.mc;
            apply_axis(x.axis, row.value, y.factory, mc);
            y.mc = mc;
            auto r = detail::base_row(y, x.sweep_cluster ? "cluster" : "direct");
            r.axis = to_string(x.axis);
            r.axis_value = row.value;
            if (x.sweep_cluster)
                r.j = x.sweep_j;
            else
                r.p = x.p;
            r.estimate = row.estimate.mean;
            r.stderr_ = row.estimate.stderr_;
            o.rows.push_back(r);
        }
        rep["axis"] = to_string(x.axis);
        rep["differences"] = t.differences;
        if (x.axis == SweepAxis::N)
            rep["stderr_slope"] = t.stderr_fit.slope;
        rep["note"] = t.note;
        v = t.verdict;
        break;
    }
    case Kind::locality: {
        const auto prof = clock.time("locality", [&] {
            const Seed seed{x.seed};
            const PointCloud cloud = x.factory.sample(seed, 0);
            const CoefficientField a = assemble_A(cloud, cloud.all_labels(), x.factory.mat, x.factory.grid());
            return locality_probe(a, x.factory.mat, x.factory.solver, x.locality_y);
        });
        for (std::size_t i = 0; i < prof.radius.size(); ++i) {
            auto r = detail::base_row(x, "locality_envelope");
            r.axis = "radius";
            r.axis_value = prof.radius[i];
            r.N = -1;
            r.estimate = prof.envelope[i];
            r.stderr_ = 0.0;
            o.rows.push_back(r);
        }
        rep["peak"] = prof.peak;
        rep["rate"] = prof.rate;
        rep["fit_from"] = prof.fit_from;
        rep["fit_to"] = prof.fit_to;
        v = prof.rate > 0 ? Verdict::pass : Verdict::fail;
        break;
    }
    }

    const long violations = diagnostics().energy_violations.load() - violations0;
    rep["energy_violations"] = violations;
    if (violations > 0) {
        o.record.warnings.push_back(std::to_string(violations) + " energy estimate violation(s)");
        v = Verdict::fail;
    }
    rep["verdict"] = to_string(v);
    o.record.verdict = v;
    return o;
}

/// Runs the experiment and writes report.json, results.csv (plus remainder.csv or
/// locality.csv where applicable) and run_record.json into x.out_dir.
inline RunRecord run(const ExperimentConfig& x)
{
    namespace fs = std::filesystem;
    const auto t0 = std::chrono::steady_clock::now();
    RunOutput o = execute(x);
    const fs::path dir(x.out_dir);
    fs::create_directories(dir);

    std::vector<std::string> files;
    {
        std::string csv = std::string(results_header) + "\n";
        for (const auto& r : o.rows)
            csv += csv_line(o.record.run_id, x.kind, r) + "\n";
        detail::write_text(dir / "results.csv", csv);
        files.push_back("results.csv");
    }
    if (x.kind == Kind::taylor) {
        std::string csv = "run_id,p,remainder,stderr,bound_estimate,quality\n";
        for (const auto& row : o.report["rows"])
            csv += o.record.run_id + "," + csv_num(row["p"].get<double>()) + "," + csv_num(row["remainder"].get<double>()) +
                   "," + csv_num(row["stderr"].get<double>()) + "," +
                   (row["bound_estimate"].is_null() ? std::string("nan") : csv_num(row["bound_estimate"].get<double>())) +
                   "," + row["quality"].get<std::string>() + "\n";
        detail::write_text(dir / "remainder.csv", csv);
        files.push_back("remainder.csv");
    }
    if (x.kind == Kind::locality) {
        std::string csv = "run_id,radius,envelope\n";
        for (const auto& r : o.rows)
            csv += o.record.run_id + "," + csv_num(r.axis_value) + "," + csv_num(r.estimate) + "\n";
        detail::write_text(dir / "locality.csv", csv);
        files.push_back("locality.csv");
    }
    detail::write_text(dir / "config.txt", x.raw.canonical());
    files.push_back("config.txt");
    detail::write_text(dir / "report.json", o.report.dump(2) + "\n");
    files.push_back("report.json");

    for (const auto& f : files)
        o.record.manifest.push_back({f, fs::file_size(dir / f), file_checksum(dir / f)});
    o.record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    nlohmann::ordered_json rr;
    rr["run_id"] = o.record.run_id;
    rr["version"] = o.record.version;
    rr["verdict"] = to_string(o.record.verdict);
    rr["wall_seconds"] = o.record.wall_seconds;
    auto& st = rr["stages"] = nlohmann::ordered_json::object();
    for (const auto& [name, secs] : o.record.stages)
        st[name] = secs;
    rr["warnings"] = o.record.warnings;
    auto& man = rr["manifest"] = nlohmann::ordered_json::array();
    for (const auto& m : o.record.manifest)
        man.push_back({{"file", m.file}, {"bytes", m.bytes}, {"fnv1a64", m.checksum}});
    detail::write_text(dir / "run_record.json", rr.dump(2) + "\n");
    return o.record;
}

/// Sweep verb: the configured base experiment along `axis` at `values`.
inline RunRecord sweep(ExperimentConfig x, SweepAxis axis, const std::vector<double>& values)
{
    if (values.empty())
        throw ConfigError("sweep.values", "a sweep needs at least one value");
    std::string vs;
    for (std::size_t i = 0; i < values.size(); ++i)
        vs += (i ? "," : "") + format_g17(values[i]);
    x.raw.set("kind", "sweep");
    x.raw.set("sweep.axis", to_string(axis));
    x.raw.set("sweep.values", vs);
    return run(ExperimentConfig::from(x.raw));
}

// ---------------------------------------------------------------------------
// Plot data

struct PlotManifest
{
    std::vector<std::string> written;
    std::vector<std::string> missing; ///< "<input>: <reason>"
};

/// Scans `results_dir` recursively for harness outputs and writes tidy CSVs into
/// `results_dir/plots`: expansion_vs_p.csv, gevrey.csv, remainder.csv, locality.csv.
inline PlotManifest emit_plot_data(const std::filesystem::path& results_dir)
{
    namespace fs = std::filesystem;
    PlotManifest pm;
    if (!fs::is_directory(results_dir)) {
        pm.missing.push_back(results_dir.string() + ": not a directory");
        return pm;
    }
    const fs::path plots = results_dir / "plots";
    std::vector<fs::path> results, remainders, localities;
    for (const auto& ent : fs::recursive_directory_iterator(results_dir)) {
        if (!ent.is_regular_file())
            continue;
        const auto rel = fs::relative(ent.path(), results_dir);
        if (!rel.empty() && *rel.begin() == "plots")
            continue;
        const auto name = ent.path().filename().string();
        if (name == "results.csv")
            results.push_back(ent.path());
        else if (name == "remainder.csv")
            remainders.push_back(ent.path());
        else if (name == "locality.csv")
            localities.push_back(ent.path());
    }
    std::sort(results.begin(), results.end());
    std::sort(remainders.begin(), remainders.end());
    std::sort(localities.begin(), localities.end());

    std::string expansion = "run_id,p,direct,direct_stderr,partial,partial_stderr,k\n";
    std::string gevrey = "run_id,j,abs_coefficient,stderr,normalized\n";
    std::string remainder = "run_id,p,remainder,stderr,bound_estimate,quality\n";
    std::string locality = "run_id,radius,envelope\n";
    bool any_expansion = false, any_gevrey = false, any_remainder = false, any_locality = false;

    auto num = [](const std::string& s) { return std::strtod(s.c_str(), nullptr); };
    for (const auto& path : results) {
        CsvTable t;
        try {
            t = CsvTable::read(path);
        } catch (const Error& e) {
            pm.missing.push_back(path.string() + ": " + e.what());
            continue;
        }
        const int c_id = t.column("run_id"), c_q = t.column("quantity"), c_j = t.column("j"), c_k = t.column("k"),
                  c_p = t.column("p"), c_e = t.column("estimate"), c_s = t.column("stderr");
        if (std::min({c_id, c_q, c_j, c_k, c_p, c_e, c_s}) < 0) {
            pm.missing.push_back(path.string() + ": unexpected header");
            continue;
        }
        std::map<std::pair<std::string, std::string>, std::array<std::string, 5>> by_p;
        for (const auto& r : t.rows) {
            if (r.size() != t.header.size()) {
                pm.missing.push_back(path.string() + ": ragged row");
                break;
            }
            const std::string& q = r[c_q];
            if (q == "cluster" && !r[c_j].empty()) {
                const int j = std::atoi(r[c_j].c_str());
                const double a = std::abs(num(r[c_e]));
                const double w = factorial(j) * factorial(j);
                gevrey += r[c_id] + "," + r[c_j] + "," + csv_num(a) + "," + r[c_s] + "," + csv_num(a / w) + "\n";
                any_gevrey = true;
            } else if (q == "direct" || q == "partial") {
                auto& slot = by_p[{r[c_id], r[c_p]}];
                if (q == "direct") {
                    slot[0] = r[c_e];
                    slot[1] = r[c_s];
                } else {
                    slot[2] = r[c_e];
                    slot[3] = r[c_s];
                    slot[4] = r[c_k];
                }
            }
        }
        for (const auto& [key, s] : by_p) {
            if (s[2].empty() || key.second.empty())
                continue;
            expansion += key.first + "," + key.second + "," + s[0] + "," + s[1] + "," + s[2] + "," + s[3] + "," + s[4] + "\n";
            any_expansion = true;
        }
    }
    auto copy_rows = [&](const std::vector<fs::path>& in, std::string& out, bool& any, std::size_t cols) {
        for (const auto& path : in) {
            CsvTable t;
            try {
                t = CsvTable::read(path);
            } catch (const Error& e) {
                pm.missing.push_back(path.string() + ": " + e.what());
                continue;
            }
            if (t.header.size() != cols) {
                pm.missing.push_back(path.string() + ": unexpected header");
                continue;
            }
            for (const auto& r : t.rows) {
                std::string line;
                for (std::size_t i = 0; i < r.size(); ++i)
                    line += (i ? "," : "") + r[i];
                out += line + "\n";
                any = true;
            }
        }
    };
    copy_rows(remainders, remainder, any_remainder, 6);
    copy_rows(localities, locality, any_locality, 3);

    auto emit = [&](bool any, const char* name, const std::string& body) {
        if (!any)
            return;
        fs::create_directories(plots);
        detail::write_text(plots / name, body);
        pm.written.push_back((fs::path("plots") / name).string());
    };
    emit(any_expansion, "expansion_vs_p.csv", expansion);
    emit(any_gevrey, "gevrey.csv", gevrey);
    emit(any_remainder, "remainder.csv", remainder);
    emit(any_locality, "locality.csv", locality);
    return pm;
}

} // namespace clex
