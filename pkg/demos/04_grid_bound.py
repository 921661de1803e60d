"""
A certified bound g_3(s) < s
============================

For q = 3 the Gaussian integral is bounded above cell by cell on [-5, 5]^2,
plus a tail allowance. The fast mode checks four values of s; the full mode
(a few minutes) covers every s in [0.1, 2/3] through a Lipschitz step.
"""
from potts_recon.appendix import small_s_check, tail_check, verify_grid
from potts_recon.gaussian_limit import eval_g

rep, res = verify_grid(full=False)
for s, u in zip(res.s, res.upper):
    g, _ = eval_g(3, min(s, 2 / 3))
    print(f"s={s:.3f}  g_3(s)={g:.5f}  certified upper bound={u:.5f}  margin={u - s:+.4f}")
print("grid passed:", rep.passed)
print("tail:", tail_check().info["tail_constant"])
print("small s:", small_s_check().passed)
