"""
Population dynamics across the Kesten-Stigum bound
==================================================

For deeper trees the posterior law is tracked by a pool of samples. Above
the bound d lambda^2 = 1 the excess mass x_n settles on a plateau; below it,
and for q = 3 close to it, x_n decays to zero.
"""
from potts_recon import ChannelParams
from potts_recon.population import estimate_threshold, run_trajectory

for lam in (0.6, 0.45, 0.1):
    params = ChannelParams(3, 4, lam)
    tr = run_trajectory(params, pool_size=20_000, seed=1)
    x = tr.column("x")
    print(f"lambda={lam}  d*lambda^2={4 * lam**2:.2f}  verdict={tr.verdict.value}  "
          f"levels={len(x) - 1}  last x={x[-1]:.2e}")

# the trajectory CSV is self-describing
print(run_trajectory(ChannelParams(3, 4, 0.6), 10_000, 3, seed=1,
                     early_stop=False).to_csv())

# bisect the ferromagnetic threshold. For q=3 it should sit at 1/sqrt(d); right
# at the bound x decays very slowly and a finite pool lands a little above it
est = estimate_threshold(3, 4, "ferro", tol=0.005, pool_size=10_000, seed=1)
print("lambda+ in", (est.plus.lo, est.plus.hi), "scaled", round(est.plus.scaled_mid, 3))
