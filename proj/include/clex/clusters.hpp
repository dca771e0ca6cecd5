#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "errors.hpp"
#include "index_set.hpp"
#include "point_process.hpp"
#include "rng.hpp"

namespace clex {

/// Default truncation radius sqrt(T) ln(1/eps).
inline double default_truncation_radius(double T, double c0 = 1.0, double eps = 1e-6)
{
    return c0 * std::sqrt(T) * std::log(1.0 / eps);
}

/// Proximity graph on a label set: labels at periodic distance <= rho are adjacent.
class ProximityGraph
{
  public:
    ProximityGraph(const PointCloud& cloud, const IndexSet& labels, double rho)
      : labels_(labels.begin(), labels.end()), adj_(labels_.size())
    {
        if (!(rho > 0.0))
            throw ParameterError("cluster radius must be positive");
        const double r2 = rho * rho;
        for (std::size_t i = 0; i < labels_.size(); ++i)
            for (std::size_t j = i + 1; j < labels_.size(); ++j)
                if (cloud.box.distance2(cloud.at(labels_[i]).x, cloud.at(labels_[j]).x) <= r2) {
                    adj_[i].push_back(static_cast<std::uint32_t>(j));
                    adj_[j].push_back(static_cast<std::uint32_t>(i));
                }
    }

    std::size_t size() const { return labels_.size(); }
    Label label(std::size_t i) const { return labels_[i]; }

    bool adjacent(std::size_t i, std::size_t j) const
    {
        return std::binary_search(adj_[i].begin(), adj_[i].end(), static_cast<std::uint32_t>(j));
    }

    /// Calls fn(IndexSet) for every j-subset whose points are pairwise within rho.
    /// Subsets come in lexicographic order of their positions in the label set.
    template <class Fn>
    void for_each_clique(std::size_t j, Fn&& fn) const
    {
        if (j == 0) {
            fn(IndexSet{});
            return;
        }
        std::vector<std::uint32_t> stack;
        std::vector<Label> out(j);
        recurse(j, stack, out, fn);
    }

    std::size_t count_cliques(std::size_t j) const
    {
        std::size_t c = 0;
        for_each_clique(j, [&](const IndexSet&) { ++c; });
        return c;
    }

  private:
    template <class Fn>
    void recurse(std::size_t j, std::vector<std::uint32_t>& stack, std::vector<Label>& out, Fn& fn) const
    {
        if (stack.size() == j) {
            for (std::size_t i = 0; i < j; ++i)
                out[i] = labels_[stack[i]];
            fn(IndexSet(out));
            return;
        }
        if (stack.empty()) {
            for (std::uint32_t i = 0; i < labels_.size(); ++i) {
                stack.push_back(i);
                recurse(j, stack, out, fn);
                stack.pop_back();
            }
            return;
        }
        // candidates: neighbors of the first member larger than the last member
        for (std::uint32_t c : adj_[stack.front()]) {
            if (c <= stack.back())
                continue;
            bool ok = true;
            for (std::size_t s = 1; s < stack.size() && ok; ++s)
                ok = adjacent(stack[s], c);
            if (!ok)
                continue;
            stack.push_back(c);
            recurse(j, stack, out, fn);
            stack.pop_back();
        }
    }

    std::vector<Label> labels_;
    std::vector<std::vector<std::uint32_t>> adj_;
};

/// Largest pairwise periodic distance within a set (0 for fewer than 2 points).
inline double set_diameter(const PointCloud& cloud, const IndexSet& s)
{
    double m = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = i + 1; j < s.size(); ++j)
            m = std::max(m, cloud.box.distance(cloud.at(s[i]).x, cloud.at(s[j]).x));
    return m;
}

/// Smallest pairwise gap |x_m - x_n| - 2 between inclusion balls, clamped at 0.
inline double min_gap(const PointCloud& cloud, const IndexSet& s)
{
    double m = INFINITY;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = i + 1; j < s.size(); ++j)
            m = std::min(m, cloud.box.distance(cloud.at(s[i]).x, cloud.at(s[j]).x) - 2.0);
    return std::max(0.0, m);
}

/// Clusters of size j, optionally reduced to a uniform random sample of at most
/// `budget` of them (reservoir sampling). `weight` scales sums over the sample
/// to unbiased estimates of sums over all clusters.
struct ClusterSample
{
    std::vector<IndexSet> clusters;
    std::size_t total = 0;
    double weight = 1.0;
    bool subsampled = false;
};

inline ClusterSample sample_clusters(const ProximityGraph& graph, std::size_t j, std::size_t budget,
                                     std::uint64_t seed)
{
    ClusterSample s;
    Engine rng(seed);
    graph.for_each_clique(j, [&](const IndexSet& f) {
        ++s.total;
        if (budget == 0 || s.clusters.size() < budget) {
            s.clusters.push_back(f);
            return;
        }
        std::uniform_int_distribution<std::size_t> pick(0, s.total - 1);
        const std::size_t r = pick(rng);
        if (r < budget)
            s.clusters[r] = f;
    });
    if (budget != 0 && s.total > budget) {
        s.subsampled = true;
        s.weight = static_cast<double>(s.total) / static_cast<double>(budget);
        std::sort(s.clusters.begin(), s.clusters.end());
    }
    return s;
}

} // namespace clex
