"""Pick a low-correlation filter subset from a synthetic bank.

Walks through the selection story: synthesize a few hundred candidate
transmittance curves, run greedy farthest-point selection against the
inner-product baseline and plain random picks, and compare the worst
pairwise |Pearson| each strategy leaves in the chosen set.
"""

import numpy as np

from snapspec.rng import Xoshiro256
from snapspec.selection import select_fps, select_innerproduct_baseline
from snapspec.spectra import generate_synthetic, pearson_stats

N, K, SEED = 300, 9, 42

# a validated bank: smooth lobes, bounded gradient, enough dynamic range
bank = generate_synthetic(N, seed=SEED)
print(f"bank: {bank.count} candidate spectra, {bank.bands} bands")

stats = pearson_stats(bank)
absp = np.abs(stats.p)
off = absp[~np.eye(N, dtype=bool)]
print(f"pairwise |p| over the full bank: median {np.median(off):.3f}, "
      f"max {off.max():.3f}")

# greedy farthest-point pick
fps = select_fps(bank, K)
print(f"\nfarthest-point subset: rows {fps.indices.tolist()}")
print(f"  worst pairwise |p| = {fps.max_offdiag:.4f}")

# threshold-resampling baseline
base = select_innerproduct_baseline(bank, K, tau=0.5, seed=SEED)
print(f"inner-product baseline (tau=0.5): worst |p| = {base.max_offdiag:.4f} "
      f"(converged: {base.converged})")

# how lucky can chance get?
rng = Xoshiro256(SEED)
draws = []
for _ in range(2000):
    idx = rng.permutation(N)[:K]
    sub = absp[np.ix_(idx, idx)]
    draws.append(sub[~np.eye(K, dtype=bool)].max())
draws = np.array(draws)
print(f"2000 random subsets: best {draws.min():.4f}, "
      f"median {np.median(draws):.4f}")
print(f"random subsets beaten by the greedy pick: "
      f"{(fps.max_offdiag <= draws).mean() * 100:.1f}%")
