"""Greedy low-correlation filter selection plus baselines and oracles.

The main selector walks the candidate bank farthest-point style: seed with
the row of lowest mean absolute Pearson correlation against everything
else, then repeatedly track, per candidate, the worst correlation to any
already-chosen row (a running elementwise max) and pick the candidate
whose worst case is smallest. The inner-product baseline reproduces the
older replace-until-under-threshold scheme, and a brute-force enumerator
provides ground truth on small instances.
"""

from dataclasses import dataclass
import itertools
import math

import numpy as np

from .rng import Xoshiro256
from .spectra import SpectrumBank, pearson_stats


@dataclass
class SelectionResult:
    indices: np.ndarray         # (k,) distinct rows into the bank
    theta: np.ndarray           # (k, bands) selected spectra, verbatim copies
    pairwise: np.ndarray        # (k, k) |Pearson| among selected rows
    max_offdiag: float
    converged: bool = True


def _values_of(bank):
    return bank.values if isinstance(bank, SpectrumBank) else np.asarray(bank)


def _make_result(values, absp, indices, converged=True):
    idx = np.asarray(indices, dtype=np.int64)
    sub = absp[np.ix_(idx, idx)]
    k = idx.size
    if k > 1:
        off = sub[~np.eye(k, dtype=bool)].max()
    else:
        off = 0.0
    return SelectionResult(
        indices=idx,
        theta=values[idx].copy(),
        pairwise=sub.copy(),
        max_offdiag=float(off),
        converged=converged,
    )


def select_fps(bank, k, use_abs=True):
    """Greedy min-max-correlation subset of k rows.

    The seed row always scores by |p| (mean over the other rows); the
    running per-candidate worst case uses |p| by default, or raw p when
    use_abs is false. Ties resolve to the smallest index.
    """
    values = _values_of(bank)
    n = values.shape[0]
    if not (1 <= k <= n):
        raise ValueError(f"need 1 <= k <= {n}, got k={k}")
    p = pearson_stats(values).p
    absp = np.abs(p)
    c = absp if use_abs else p

    if n == 1:
        return _make_result(values, absp, [0])
    score = (absp.sum(axis=1) - np.diag(absp)) / (n - 1)
    index = int(np.argmin(score))
    chosen = [index]
    taken = np.zeros(n, dtype=bool)
    taken[index] = True
    d = np.full(n, -np.inf)
    while len(chosen) < k:
        d = np.maximum(d, c[index])
        # argmin over candidates; rows already taken only matter in the
        # degenerate all-duplicates case, so mask them out to keep the
        # index list distinct
        masked = np.where(taken, np.inf, d)
        index = int(np.argmin(masked))
        chosen.append(index)
        taken[index] = True
    return _make_result(values, absp, chosen)


def select_innerproduct_baseline(bank, k, tau, seed=0, max_iters=1000):
    """Random init, then swap out members whose cosine similarity to any
    other member exceeds tau. Returns the best set found (by its own
    worst-cosine criterion) with converged=False if the cap was hit."""
    values = _values_of(bank)
    n = values.shape[0]
    if not (1 <= k <= n):
        raise ValueError(f"need 1 <= k <= {n}, got k={k}")
    if not (0.0 < tau <= 1.0):
        raise ValueError("tau must lie in (0, 1]")
    v = values.astype(np.float64)
    norms = np.linalg.norm(v, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero-norm spectrum in dataset")
    cos = (v @ v.T) / np.outer(norms, norms)
    absp = np.abs(pearson_stats(values).p)

    if k == n:
        idx = np.arange(n)
        worst = _worst_cos(cos, idx)
        return _make_result(values, absp, idx, converged=worst <= tau)

    rng = Xoshiro256(seed)
    members = list(rng.permutation(n)[:k])
    best = list(members)
    best_worst = _worst_cos(cos, members)
    converged = best_worst <= tau
    it = 0
    while not converged and it < max_iters:
        it += 1
        sub = cos[np.ix_(members, members)]
        np.fill_diagonal(sub, -np.inf)
        peers = sub.max(axis=1)
        offender = int(np.argmax(peers))  # worst member this round
        if peers[offender] <= tau:
            converged = True
            break
        members[offender] = _fresh_candidate(rng, n, members)
        worst = _worst_cos(cos, members)
        if worst < best_worst:
            best_worst = worst
            best = list(members)
        converged = worst <= tau
    final = members if converged else best
    return _make_result(values, absp, final, converged=converged)


def _worst_cos(cos, members):
    idx = np.asarray(members)
    if idx.size < 2:
        return 0.0
    sub = cos[np.ix_(idx, idx)]
    return float(sub[~np.eye(idx.size, dtype=bool)].max())


def _fresh_candidate(rng, n, members):
    have = set(members)
    for _ in range(2 * n):
        cand = rng.integers(0, n)
        if cand not in have:
            return cand
    for cand in range(n):  # deterministic fallback
        if cand not in have:
            return cand
    raise RuntimeError("no replacement candidate available")


def brute_force_oracle(bank, k, budget=1_000_000):
    """Exhaustive min of max_offdiag over all k-subsets; first (lexicographic)
    winner on ties."""
    values = _values_of(bank)
    n = values.shape[0]
    if not (1 <= k <= n):
        raise ValueError(f"need 1 <= k <= {n}, got k={k}")
    if math.comb(n, k) > budget:
        raise ValueError(f"C({n},{k}) exceeds the enumeration budget")
    absp = np.abs(pearson_stats(values).p)
    best_combo = None
    best_val = np.inf
    for combo in itertools.combinations(range(n), k):
        if k == 1:
            val = 0.0
        else:
            sub = absp[np.ix_(combo, combo)]
            val = sub[~np.eye(k, dtype=bool)].max()
        if val < best_val:
            best_val = val
            best_combo = combo
    return _make_result(values, absp, list(best_combo))


def correlation_report(result, path):
    """Write the |Pearson| matrix to `path` and the selected spectra next to
    it (<stem>_spectra.csv)."""
    path = str(path)
    np.savetxt(path, result.pairwise, fmt="%.9g", delimiter=",")
    stem = path[: path.rindex(".")] if "." in path.split("/")[-1] else path
    np.savetxt(stem + "_spectra.csv", result.theta, fmt="%.9g", delimiter=",")
