"""Classical proximal-gradient recovery, no learning involved.

Two experiments. First the textbook compressed-sensing setup: a sparse
vector hit by a random Gaussian matrix, recovered by iterative
soft-thresholding with a geometrically decaying threshold. Then the same
solver machinery on the mosaic camera problem, watching the objective
(data fidelity + l1 weight) fall stage by stage.
"""

import numpy as np

from snapspec.forward_model import build_mosaic, coding_energy, encode
from snapspec.rng import Xoshiro256
from snapspec.scenes import generate_scenes
from snapspec.selection import select_fps
from snapspec.spectra import generate_synthetic
from snapspec.unfolding import (
    UnfoldingConfig,
    gradient_step,
    measure_objective,
    prox_soft_threshold,
    run_unfolding,
)

# ---- sparse vector, random rows ----

rng = Xoshiro256(0)
n, m, k = 64, 48, 6
A = rng.normal((m, n)) / np.sqrt(m)
x_true = np.zeros(n)
support = rng.permutation(n)[:k]
x_true[support] = rng.uniform((k,), 0.5, 1.5)
y = A @ x_true

rho = 1.0 / np.linalg.norm(A, 2) ** 2
lam0 = 0.2 * np.abs(A.T @ y).max()
x = np.zeros(n)
print("sparse recovery (threshold halves every 30 iterations):")
for it in range(500):
    lam = max(lam0 * 0.5 ** (it // 30), 1e-9)
    x = prox_soft_threshold(x - rho * (A.T @ (A @ x - y)), rho * lam)
    if it % 100 == 0 or it == 499:
        rel = np.linalg.norm(x - x_true) / np.linalg.norm(x_true)
        print(f"  iter {it:3d}: rel err {rel:.2e}, nonzeros {np.sum(x != 0)}")
print(f"  support recovered: {sorted(np.flatnonzero(x)) == sorted(support)}")

# ---- the camera problem ----

bank = generate_synthetic(40, seed=3, bands=8, g_max=0.6)
phi = build_mosaic(select_fps(bank, 16).theta.astype(np.float64), 32, 32, 4)
scene = generate_scenes(1, 32, 32, 8, seed=9)[0].data.astype(np.float64)
meas = encode(scene, phi)

reg = 1e-3
step = 1.0 / float(coding_energy(phi).max())
xk = np.zeros_like(scene)
print("\nmosaic problem, objective per iteration (step = 1/L):")
for it in range(12):
    obj = measure_objective(xk, meas.y, phi, reg_weight=reg)
    print(f"  iter {it:2d}: fidelity {obj.fidelity:.6f}  "
          f"objective {obj.total:.6f}  sparsity {obj.sparsity:.1f}")
    xk = prox_soft_threshold(gradient_step(xk, meas.y, phi, step), step * reg)

# same loop, packaged (run_unfolding defaults to the energy-normalized
# adjoint start, so hand it the zero start used above)
cfg = UnfoldingConfig(stages=12, reg_weight=reg)
res = run_unfolding(meas, phi, cfg, x0=np.zeros_like(scene))
print(f"\nrun_unfolding, 12 stages: final fidelity {res.fidelity[-1]:.6f} "
      f"(matches: {abs(res.fidelity[-1] - measure_objective(xk, meas.y, phi).fidelity) < 1e-12})")
