#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "point_process.hpp"
#include "rng.hpp"

namespace clex {

/// Schema entry of the experiment configuration.
struct ConfigField
{
    const char* key;
    const char* fallback;
    const char* doc;
};

// clang-format off
inline const std::vector<ConfigField>& config_schema()
{
    static const std::vector<ConfigField> fields = {
        {"kind",                     "oracle1d",   "direct | cluster | taylor | s_table | jc | sweep | oracle1d | locality"},
        {"seed",                     "1",          "master seed (u64)"},
        {"output.dir",               "results",    "output directory"},
        {"physics.d",                "1",          "dimension 1..3"},
        {"physics.L",                "400",        "box side"},
        {"physics.n",                "4000",       "cells per side"},
        {"physics.h",                "0.1",        "cube side of the discretized process"},
        {"physics.lambda",           "0.1",        "intensity"},
        {"physics.process",          "discretized","discretized | poisson"},
        {"physics.p",                "1",          "thinning parameter"},
        {"physics.p_grid",           "0.05,0.075,0.1,0.15,0.2,0.3,0.4", "thinning grid (taylor)"},
        {"physics.T",                "400",        "massive parameter"},
        {"physics.alpha",            "1",          "A1 = alpha Id"},
        {"physics.beta",             "4",          "A2 = beta Id"},
        {"physics.e",                "1",          "direction (comma separated, unit length)"},
        {"solver.tolerance",         "1e-10",      "relative residual"},
        {"solver.max_iterations",    "0",          "0 -> 10 n^d"},
        {"solver.method",            "automatic",  "automatic | pcg_jacobi | pcg_spectral | direct_1d"},
        {"solver.window",            "false",      "localized-window solves for subset correctors"},
        {"solver.window_c1",         "2",          "window radius factor"},
        {"solver.window_eps",        "1e-6",       "window tail tolerance"},
        {"cache.subset_cap",         "8",          "largest |F u H|"},
        {"cache.cells",              "0",          "corrector cache capacity in cells (0 -> 2 GiB)"},
        {"mc.N",                     "40",         "realizations"},
        {"mc.rho_trunc",             "0",          "cluster truncation radius (0 -> sqrt(T) ln 1e6)"},
        {"mc.confidence",            "0.95",       "confidence level of reported intervals"},
        {"mc.workers",               "1",          "worker threads"},
        {"mc.cluster_budget",        "0",          "cluster subsample size per realization (0 -> all)"},
        {"mc.max_failure_fraction",  "0.01",       "tolerated fraction of failed solves"},
        {"expansion.orders",         "0,1,2",      "orders j (cluster)"},
        {"expansion.k",              "2",          "Taylor order (taylor)"},
        {"expansion.max_order",      "3",          "largest j + k (s_table)"},
        {"taylor.bound_realizations","0",          "realizations used for the remainder bound (0 -> skip)"},
        {"taylor.bound_budget",      "16",         "clusters sampled per realization for the bound"},
        {"jc.a",                     "1,2,3",      "sizes of H"},
        {"jc.b",                     "1",          "size of G"},
        {"jc.c",                     "1",          "size of F"},
        {"jc.kappa",                 "1",          "decay rate of R"},
        {"jc.h_values",              "0.5,0.25,0.125", "process resolutions compared for stability"},
        {"sweep.axis",               "T",          "T | h | L | N | n"},
        {"sweep.values",             "",           "comma separated axis values"},
        {"sweep.target",             "direct",     "direct | cluster"},
        {"sweep.j",                  "1",          "order when target = cluster"},
        {"locality.y",               "0",          "corner of the swapped unit cube (comma separated)"},
    };
    return fields;
}
// clang-format on

/// Environment variable prefix for overrides: CLEX_PHYSICS_T=100 sets physics.T.
inline constexpr const char* env_prefix = "CLEX_";

inline std::string env_name(const std::string& key)
{
    std::string s = env_prefix;
    for (char c : key)
        s += (c == '.') ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

inline std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos)
        return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!trim(item).empty())
            out.push_back(trim(item));
    return out;
}

/// Flat key = value configuration with schema defaults and strict key checking.
class Config
{
  public:
    Config()
    {
        for (const auto& f : config_schema())
            values_[f.key] = f.fallback;
    }

    static bool known(const std::string& key)
    {
        for (const auto& f : config_schema())
            if (key == f.key)
                return true;
        return false;
    }

    /// Parses `key = value` lines; '#' starts a comment. Unknown keys are rejected.
    static Config parse(std::istream& is, const std::string& origin = "<config>")
    {
        Config c;
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (auto h = line.find('#'); h != std::string::npos)
                line = line.substr(0, h);
            line = trim(line);
            if (line.empty())
                continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno), "expected 'key = value'");
            const std::string key = trim(line.substr(0, eq));
            c.set(key, trim(line.substr(eq + 1)));
        }
        return c;
    }

    static Config load(const std::string& path)
    {
        std::ifstream in(path);
        if (!in)
            throw ConfigError("--config", "cannot open '" + path + "'");
        return parse(in, path);
    }

    void set(const std::string& key, const std::string& value)
    {
        if (!known(key))
            throw ConfigError(key, "unknown key");
        values_[key] = value;
    }

    /// Applies CLEX_* environment overrides for every schema key.
    void apply_environment()
    {
        for (const auto& f : config_schema())
            if (const char* v = std::getenv(env_name(f.key).c_str()))
                values_[f.key] = v;
    }

    const std::string& str(const std::string& key) const
    {
        auto it = values_.find(key);
        if (it == values_.end())
            throw ConfigError(key, "unknown key");
        return it->second;
    }

    double num(const std::string& key) const
    {
        const std::string& s = str(key);
        char* end = nullptr;
        const double v = std::strtod(s.c_str(), &end);
        if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v))
            throw ConfigError(key, "expected a finite number, got '" + s + "'");
        return v;
    }

    long integer(const std::string& key) const
    {
        const double v = num(key);
        if (v != std::floor(v))
            throw ConfigError(key, "expected an integer, got '" + str(key) + "'");
        return static_cast<long>(v);
    }

    std::uint64_t u64(const std::string& key) const
    {
        const std::string& s = str(key);
        char* end = nullptr;
        const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
        if (s.empty() || end != s.c_str() + s.size() || s[0] == '-')
            throw ConfigError(key, "expected an unsigned integer, got '" + s + "'");
        return v;
    }

    bool flag(const std::string& key) const
    {
        const std::string& s = str(key);
        if (s == "true" || s == "1" || s == "yes")
            return true;
        if (s == "false" || s == "0" || s == "no")
            return false;
        throw ConfigError(key, "expected true or false, got '" + s + "'");
    }

    std::vector<double> list(const std::string& key) const
    {
        std::vector<double> out;
        for (const auto& item : split_list(str(key))) {
            char* end = nullptr;
            const double v = std::strtod(item.c_str(), &end);
            if (end != item.c_str() + item.size() || !std::isfinite(v))
                throw ConfigError(key, "expected a list of numbers, got '" + str(key) + "'");
            out.push_back(v);
        }
        return out;
    }

    /// Canonical text: sorted keys, one per line.
    std::string canonical() const
    {
        std::string s;
        for (const auto& [k, v] : values_)
            s += k + " = " + v + "\n";
        return s;
    }

    /// Keys that cannot change any result value and are left out of the run id.
    static bool result_neutral(const std::string& key) { return key == "output.dir" || key == "mc.workers"; }

    std::string run_id() const
    {
        std::string s;
        for (const auto& [k, v] : values_)
            if (!result_neutral(k))
                s += k + " = " + v + "\n";
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(detail::fnv1a(s)));
        return buf;
    }

    const std::map<std::string, std::string>& values() const { return values_; }

  private:
    std::map<std::string, std::string> values_;
};

} // namespace clex
