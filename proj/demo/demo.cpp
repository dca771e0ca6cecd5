// Small tour: one 1D realization, its corrector, the first cluster
// coefficients, and the comparison with the layered-medium oracle.
#include <cstdio>

#include "clex/clex.hpp"

int main()
{
    using namespace clex;

    ContextFactory f;
    f.dim = 1;
    f.L = 200;
    f.n = 2000;
    f.lambda = 0.2;
    f.h = 0.1;
    f.solver.T = 400;

    const Seed seed{7};
    RealizationContext ctx = f.context_for(seed, 0);
    std::printf("cloud: %zu points in [0, %g)\n", ctx.cloud().size(), f.L);

    const auto phi = ctx.corrector(ctx.cloud().all_labels());
    std::printf("corrector: %ld iterations, residual %.2e, energy slack %.3e\n", phi->stats.iterations,
                phi->stats.relative_residual, phi->energy.slack());
    std::printf("flux average at p = 1: %.6f\n", ctx.flux(ctx.cloud().all_labels()));

    MCParams mc;
    mc.N = 20;
    mc.seed = 7;
    const auto direct = direct_coefficient(f, 1.0, mc);
    const double exact = oracle1d::value(f.lambda, 1.0, 4.0);
    std::printf("direct: %.5f +- %.5f   oracle %.5f\n", direct.value.mean, direct.value.stderr_, exact);

    const auto coeffs = cluster_coefficients(f, {0, 1, 2}, mc);
    for (int j = 0; j <= 2; ++j)
        std::printf("A^%d: %+.5f +- %.5f   oracle %+.5f\n", j, coeffs[j].value.mean, coeffs[j].value.stderr_,
                    oracle1d::coefficient(j, f.lambda, 1.0, 4.0));
    return 0;
}
