#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace clex {

using Label = std::uint32_t;

/// Finite set of point labels kept as a strictly increasing vector.
///
/// The sorted vector doubles as the canonical encoding: two sets are equal iff
/// their vectors are equal, which makes it directly usable as a cache key.
class IndexSet
{
  public:
    IndexSet() = default;

    IndexSet(std::initializer_list<Label> labels) : labels_(labels) { normalize(); }

    explicit IndexSet(std::vector<Label> labels) : labels_(std::move(labels)) { normalize(); }

    static IndexSet range(Label count)
    {
        IndexSet s;
        s.labels_.resize(count);
        for (Label i = 0; i < count; ++i)
            s.labels_[i] = i;
        return s;
    }

    std::size_t size() const noexcept { return labels_.size(); }
    bool empty() const noexcept { return labels_.empty(); }
    std::span<const Label> labels() const noexcept { return labels_; }
    auto begin() const noexcept { return labels_.begin(); }
    auto end() const noexcept { return labels_.end(); }
    Label operator[](std::size_t i) const { return labels_[i]; }

    bool contains(Label l) const { return std::binary_search(labels_.begin(), labels_.end(), l); }

    IndexSet unite(const IndexSet& o) const
    {
        IndexSet r;
        std::set_union(labels_.begin(), labels_.end(), o.labels_.begin(), o.labels_.end(),
                       std::back_inserter(r.labels_));
        return r;
    }

    IndexSet minus(const IndexSet& o) const
    {
        IndexSet r;
        std::set_difference(labels_.begin(), labels_.end(), o.labels_.begin(), o.labels_.end(),
                            std::back_inserter(r.labels_));
        return r;
    }

    IndexSet intersect(const IndexSet& o) const
    {
        IndexSet r;
        std::set_intersection(labels_.begin(), labels_.end(), o.labels_.begin(), o.labels_.end(),
                              std::back_inserter(r.labels_));
        return r;
    }

    bool disjoint_from(const IndexSet& o) const { return intersect(o).empty(); }

    bool subset_of(const IndexSet& o) const
    {
        return std::includes(o.labels_.begin(), o.labels_.end(), labels_.begin(), labels_.end());
    }

    /// Subset selected by the bits of `mask` (bit i <-> i-th smallest label).
    IndexSet select(std::uint64_t mask) const
    {
        IndexSet r;
        for (std::size_t i = 0; i < labels_.size(); ++i)
            if (mask & (std::uint64_t{1} << i))
                r.labels_.push_back(labels_[i]);
        return r;
    }

    std::string to_string() const
    {
        std::string s = "{";
        for (std::size_t i = 0; i < labels_.size(); ++i) {
            if (i)
                s += ",";
            s += std::to_string(labels_[i]);
        }
        return s + "}";
    }

    friend bool operator==(const IndexSet&, const IndexSet&) = default;
    friend auto operator<=>(const IndexSet& a, const IndexSet& b) { return a.labels_ <=> b.labels_; }

    friend std::ostream& operator<<(std::ostream& os, const IndexSet& s) { return os << s.to_string(); }

  private:
    void normalize()
    {
        std::sort(labels_.begin(), labels_.end());
        if (std::adjacent_find(labels_.begin(), labels_.end()) != labels_.end())
            throw ContractError("IndexSet: duplicate label");
    }

    std::vector<Label> labels_;
};

struct IndexSetHash
{
    std::size_t operator()(const IndexSet& s) const noexcept
    {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (Label l : s) {
            h ^= l;
            h *= 0x100000001b3ULL;
            h ^= h >> 29;
        }
        return static_cast<std::size_t>(h ^ s.size());
    }
};

/// Calls `fn(subset)` for every subset of `set` (2^|set| calls, empty set first).
template <class Fn>
void for_each_subset(const IndexSet& set, Fn&& fn)
{
    if (set.size() > 62)
        throw CombinatorialGuardError("for_each_subset: set too large");
    const std::uint64_t count = std::uint64_t{1} << set.size();
    for (std::uint64_t m = 0; m < count; ++m)
        fn(set.select(m));
}

/// (-1)^k
constexpr int parity_sign(std::size_t k) noexcept { return (k % 2 == 0) ? 1 : -1; }

} // namespace clex
