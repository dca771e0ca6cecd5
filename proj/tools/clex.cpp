#include <iostream>

#include <CLI11.hpp>

#include "clex/harness.hpp"

namespace {

struct Common
{
    std::string config;
    std::string seed;
    std::string out;
    std::string workers;
};

void add_common(CLI::App* app, Common& c, bool with_overrides)
{
    app->add_option("--config", c.config, "key = value experiment file")->check(CLI::ExistingFile);
    if (!with_overrides)
        return;
    app->add_option("--seed", c.seed, "master seed (u64)");
    app->add_option("--out", c.out, "output directory");
    app->add_option("--workers", c.workers, "worker threads");
}

// Precedence: schema defaults < config file < CLEX_* environment < command-line flags.
clex::ExperimentConfig load(const Common& c)
{
    clex::Config cfg = c.config.empty() ? clex::Config() : clex::Config::load(c.config);
    cfg.apply_environment();
    if (!c.seed.empty())
        cfg.set("seed", c.seed);
    if (!c.out.empty())
        cfg.set("output.dir", c.out);
    if (!c.workers.empty())
        cfg.set("mc.workers", c.workers);
    return clex::ExperimentConfig::from(cfg);
}

int report(const clex::RunRecord& r, const std::string& dir)
{
    std::cout << "run " << r.run_id << " " << clex::to_string(r.verdict) << " (" << dir << ")\n";
    for (const auto& w : r.warnings)
        std::cerr << "warning: " << w << "\n";
    return clex::exit_code(r.verdict);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"clex: cluster expansion experiments for random two-phase media"};
    app.require_subcommand(1);
    Common common;

    auto* run = app.add_subcommand("run", "run the configured experiment");
    add_common(run, common, true);

    auto* sweep = app.add_subcommand("sweep", "run the base experiment along one axis");
    add_common(sweep, common, true);
    std::string axis = "T";
    std::vector<double> values;
    sweep->add_option("--axis", axis, "T | h | L | N | n")->required();
    sweep->add_option("--values", values, "axis values")->delimiter(',')->required();

    auto* plot = app.add_subcommand("emit-plot-data", "write tidy plot CSVs from a results directory");
    std::string results_dir;
    plot->add_option("dir", results_dir, "results directory")->required();

    auto* validate = app.add_subcommand("validate", "check a configuration without running it");
    add_common(validate, common, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*run) {
            const auto x = load(common);
            return report(clex::run(x), x.out_dir);
        }
        if (*sweep) {
            const auto x = load(common);
            return report(clex::sweep(x, clex::parse_axis(axis), values), x.out_dir);
        }
        if (*plot) {
            const auto m = clex::emit_plot_data(results_dir);
            for (const auto& f : m.written)
                std::cout << f << "\n";
            for (const auto& f : m.missing)
                std::cerr << "missing: " << f << "\n";
            return 0;
        }
        if (*validate) {
            const auto x = load(common);
            std::cout << "ok " << x.run_id() << " kind=" << clex::to_string(x.kind) << "\n";
            return 0;
        }
    } catch (const clex::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
