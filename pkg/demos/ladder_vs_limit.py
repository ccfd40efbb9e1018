"""Scaled headcount against the limit diffusion along a small n-ladder.

Runs in well under a minute:

    python3 demos/ladder_vs_limit.py

Rates are 0.5 or 1.5 with equal probability, so the limit drift is random.
Both policies are shown: longest-idle-first reflects idleness at the mean
squared rate over the mean rate, fastest-server-first at the slowest rate.
"""
from manyserver import Discrete, Extract, Model, RateLawSpec, limit_marginals, run_replications, xhat_matrix
from manyserver.stats import convergence_table

SEED = 2024
T = 1.0
LADDER = (25, 100, 400)
REPS = 500


def ladder_table(policy):
    model = Model.build(RateLawSpec.iid(Discrete((0.5, 1.5), (0.5, 0.5))), lambda_hat=0.0, policy=policy)
    samples = {}
    for n in LADDER:
        sums = run_replications(model, n, REPS, SEED, T, Extract(times=(T,), grid_step=0.05))
        samples[n] = xhat_matrix(sums)[:, 0]
    _, ref = limit_marginals(model, SEED, [T], step=1e-3, horizon=T, paths=REPS)
    return model, convergence_table(samples, ref[:, 0], T)


def main():
    for policy in ("p1", "p2"):
        model, table = ladder_table(policy)
        p = model.params
        coeff = p.gamma if policy == "p1" else p.mu_min
        print(f"policy {policy}: reflection coefficient {coeff:g}, sigma^2 {p.sigma ** 2:g}, "
              f"drift sd {p.zeta_var ** 0.5:g}")
        print("     n      KS   p-value      W1")
        for r in table.rows:
            print(f"{r.n:6d}  {r.ks_distance:.4f}  {r.ks_pvalue:8.3g}  {r.w1:.4f}")
        print()


if __name__ == "__main__":
    main()
