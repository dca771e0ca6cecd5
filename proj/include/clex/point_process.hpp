#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "index_set.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace clex {

using Vec = std::array<double, 3>;

/// Periodic cube [0, L)^d standing in for the whole space.
struct Box
{
    int dim = 1;
    double side = 1.0;
    bool periodic = true;

    void validate() const
    {
        if (dim < 1 || dim > 3)
            throw GeometryError("Box: dimension must be 1, 2 or 3");
        if (!(side > 0.0) || !std::isfinite(side))
            throw GeometryError("Box: side length must be positive");
        if (!periodic)
            throw GeometryError("Box: only periodic boxes are supported");
    }

    double volume() const { return std::pow(side, dim); }

    /// Minimal-image displacement component.
    double wrap_delta(double dx) const
    {
        dx = std::fmod(dx, side);
        if (dx > 0.5 * side)
            dx -= side;
        else if (dx < -0.5 * side)
            dx += side;
        return dx;
    }

    double distance2(const Vec& a, const Vec& b) const
    {
        double s = 0.0;
        for (int k = 0; k < dim; ++k) {
            const double d = wrap_delta(a[k] - b[k]);
            s += d * d;
        }
        return s;
    }

    double distance(const Vec& a, const Vec& b) const { return std::sqrt(distance2(a, b)); }

    /// Largest possible periodic distance between two points of the box.
    double max_distance() const { return 0.5 * side * std::sqrt(static_cast<double>(dim)); }
};

enum class Origin { poisson, discretized, thinned, manual };

inline const char* to_string(Origin o)
{
    switch (o) {
    case Origin::poisson: return "poisson";
    case Origin::discretized: return "discretized";
    case Origin::thinned: return "thinned";
    case Origin::manual: return "manual";
    }
    return "?";
}

struct Point
{
    Label label = 0;
    Vec x{0.0, 0.0, 0.0};
};

/// Parameters that produced a cloud; also the header of the text format.
struct ProcessParams
{
    double lambda = 0.0;
    double h = 0.0; ///< 0 for plain Poisson clouds
    double p = 1.0;
};

/// Finite labeled point set in a periodic box. Labels are 0..size-1 in order.
struct PointCloud
{
    Box box;
    std::vector<Point> points;
    Origin origin = Origin::manual;
    ProcessParams params;
    std::uint64_t seed = 0;

    std::size_t size() const noexcept { return points.size(); }

    const Point& at(Label l) const
    {
        if (l >= points.size())
            throw LookupError("PointCloud: unknown label " + std::to_string(l));
        return points[l];
    }

    IndexSet all_labels() const { return IndexSet::range(static_cast<Label>(points.size())); }

    /// Build a cloud from raw positions (labels assigned in order, positions wrapped).
    static PointCloud from_positions(const Box& box, const std::vector<Vec>& xs)
    {
        box.validate();
        PointCloud c;
        c.box = box;
        c.origin = Origin::manual;
        c.points.reserve(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) {
            Point p;
            p.label = static_cast<Label>(i);
            for (int k = 0; k < box.dim; ++k) {
                double v = std::fmod(xs[i][k], box.side);
                if (v < 0)
                    v += box.side;
                if (v >= box.side)
                    v = 0.0;
                p.x[k] = v;
            }
            c.points.push_back(p);
        }
        return c;
    }
};

/// Poisson point process of intensity lambda on the box.
inline PointCloud sample_poisson(double lambda, const Box& box, std::uint64_t seed)
{
    box.validate();
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
        throw ParameterError("sample_poisson: intensity must be non-negative");
    PointCloud c;
    c.box = box;
    c.origin = Origin::poisson;
    c.params = {lambda, 0.0, 1.0};
    c.seed = seed;
    Engine rng(seed);
    const double mean = lambda * box.volume();
    if (mean == 0.0)
        return c;
    std::poisson_distribution<long> count_dist(mean);
    const long count = count_dist(rng);
    c.points.resize(static_cast<std::size_t>(count));
    for (long i = 0; i < count; ++i) {
        c.points[i].label = static_cast<Label>(i);
        for (int k = 0; k < box.dim; ++k)
            c.points[i].x[k] = uniform01(rng) * box.side;
    }
    return c;
}

inline long cubes_per_side(double side, double h)
{
    if (!(h > 0.0))
        throw ParameterError("discretization step h must be positive");
    const double r = side / h;
    const double rr = std::round(r);
    if (std::abs(r - rr) > 1e-9 * std::max(1.0, r) || rr < 1)
        throw GeometryError("box side L must be an integer multiple of h");
    return static_cast<long>(rr);
}

/// Bernoulli parameter lambda*h^d of the discretized process, validated.
inline double discretized_bernoulli(double h, double lambda, int dim)
{
    if (!(lambda >= 0.0))
        throw ParameterError("intensity must be non-negative");
    const double q = lambda * std::pow(h, dim);
    if (q > 1.0 + 1e-12)
        throw ParameterError("lambda*h^d = " + std::to_string(q) + " exceeds 1");
    return std::min(q, 1.0);
}

/// One uniform candidate per cube z + [0,h)^d, kept with probability lambda*h^d.
/// Cubes are visited in lexicographic order of z (first coordinate slowest).
inline PointCloud sample_discretized(double h, double lambda, const Box& box, std::uint64_t seed)
{
    box.validate();
    const double q = discretized_bernoulli(h, lambda, box.dim);
    const long m = cubes_per_side(box.side, h);
    PointCloud c;
    c.box = box;
    c.origin = Origin::discretized;
    c.params = {lambda, h, 1.0};
    c.seed = seed;
    if (q == 0.0)
        return c;
    Engine rng(seed);
    long total = 1;
    for (int k = 0; k < box.dim; ++k)
        total *= m;
    std::array<long, 3> z{0, 0, 0};
    for (long idx = 0; idx < total; ++idx) {
        long rem = idx;
        for (int k = box.dim - 1; k >= 0; --k) {
            z[k] = rem % m;
            rem /= m;
        }
        if (uniform01(rng) < q) {
            Point p;
            p.label = static_cast<Label>(c.points.size());
            for (int k = 0; k < box.dim; ++k)
                p.x[k] = (static_cast<double>(z[k]) + uniform01(rng)) * h;
            c.points.push_back(p);
        }
    }
    return c;
}

/// Labels kept by an independent Bernoulli(p) deletion.
///
/// Each point n gets one uniform u_n from the seed; it is kept iff u_n < p.
/// With a fixed seed the kept sets are therefore nested in p.
inline IndexSet thinning_set(const PointCloud& cloud, double p, std::uint64_t seed)
{
    if (!(p >= 0.0 && p <= 1.0))
        throw ParameterError("thinning parameter p must lie in [0,1]");
    Engine rng(seed);
    std::vector<Label> kept;
    for (const auto& pt : cloud.points) {
        if (uniform01(rng) < p)
            kept.push_back(pt.label);
    }
    return IndexSet(std::move(kept));
}

/// Sub-cloud made of the given labels, relabeled 0..|E|-1 in increasing order.
inline PointCloud restrict_cloud(const PointCloud& cloud, const IndexSet& keep)
{
    PointCloud r;
    r.box = cloud.box;
    r.origin = cloud.origin;
    r.params = cloud.params;
    r.seed = cloud.seed;
    for (Label l : keep) {
        Point p = cloud.at(l);
        p.label = static_cast<Label>(r.points.size());
        r.points.push_back(p);
    }
    return r;
}

inline PointCloud thin(const PointCloud& cloud, double p, std::uint64_t seed)
{
    PointCloud r = restrict_cloud(cloud, thinning_set(cloud, p, seed));
    r.origin = Origin::thinned;
    r.params.p = cloud.params.p * p;
    return r;
}

/// Which sampler `count_statistics` runs.
struct ProcessSpec
{
    enum class Kind { poisson, discretized, thinned_discretized } kind = Kind::poisson;
    Box box;
    double lambda = 0.0;
    double h = 1.0;
    double p = 1.0;
};

struct CountMoments
{
    double mean = 0.0;
    double variance = 0.0;
    std::size_t samples = 0;
    std::map<std::size_t, std::size_t> histogram;
    std::vector<double> counts;
};

inline PointCloud sample_process(const ProcessSpec& spec, const Seed& seed, std::uint64_t index)
{
    switch (spec.kind) {
    case ProcessSpec::Kind::poisson: return sample_poisson(spec.lambda, spec.box, seed.derive("cloud", index));
    case ProcessSpec::Kind::discretized:
        return sample_discretized(spec.h, spec.lambda, spec.box, seed.derive("cloud", index));
    case ProcessSpec::Kind::thinned_discretized: {
        auto c = sample_discretized(spec.h, spec.lambda, spec.box, seed.derive("cloud", index));
        return thin(c, spec.p, seed.derive("thin", index));
    }
    }
    return {};
}

inline CountMoments count_statistics(const ProcessSpec& spec, std::size_t n_samples, std::uint64_t seed)
{
    if (n_samples < 1)
        throw ParameterError("count_statistics: n_samples must be >= 1");
    const Seed s{seed};
    CountMoments m;
    m.samples = n_samples;
    m.counts.resize(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) {
        const auto c = sample_process(spec, s, i);
        m.counts[i] = static_cast<double>(c.size());
        ++m.histogram[c.size()];
    }
    m.mean = pairwise_sum(m.counts) / static_cast<double>(n_samples);
    m.variance = sample_variance(m.counts);
    return m;
}

// ---------------------------------------------------------------------------
// Text format: header `d L h lambda p seed`, then `label x1 .. xd` per point.
// ---------------------------------------------------------------------------

inline std::string format_g17(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_cloud(std::ostream& os, const PointCloud& c)
{
    os << c.box.dim << ' ' << format_g17(c.box.side) << ' ' << format_g17(c.params.h) << ' '
       << format_g17(c.params.lambda) << ' ' << format_g17(c.params.p) << ' ' << c.seed << '\n';
    for (const auto& p : c.points) {
        os << p.label;
        for (int k = 0; k < c.box.dim; ++k)
            os << ' ' << format_g17(p.x[k]);
        os << '\n';
    }
}

inline PointCloud read_cloud(std::istream& is)
{
    PointCloud c;
    std::string line;
    if (!std::getline(is, line))
        throw ParameterError("read_cloud: missing header");
    {
        std::istringstream hs(line);
        if (!(hs >> c.box.dim >> c.box.side >> c.params.h >> c.params.lambda >> c.params.p >> c.seed))
            throw ParameterError("read_cloud: malformed header");
    }
    c.box.validate();
    while (std::getline(is, line)) {
        if (line.empty())
            continue;
        std::istringstream ls(line);
        Point p;
        if (!(ls >> p.label))
            throw ParameterError("read_cloud: malformed point line");
        for (int k = 0; k < c.box.dim; ++k)
            if (!(ls >> p.x[k]))
                throw ParameterError("read_cloud: missing coordinate");
        if (p.label != c.points.size())
            throw ParameterError("read_cloud: labels must be contiguous from 0");
        c.points.push_back(p);
    }
    c.origin = c.params.p < 1.0 ? Origin::thinned : (c.params.h > 0 ? Origin::discretized : Origin::poisson);
    return c;
}

} // namespace clex
