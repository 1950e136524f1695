"""Deterministic random number generation.

Every stochastic step in the toolkit (spectrum synthesis, scene painting,
noise injection, weight init, augmentation draws) pulls from an explicit
generator seeded by the caller, so a pipeline rerun with the same seeds is
bit-identical.  The generator is a counter-mode splitmix64 that seeds
independent xoshiro256** lanes, one lane per output element, which makes
bulk draws a handful of vectorized uint64 ops instead of a Python loop.
"""

import numpy as np

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_A = np.uint64(0xBF58476D1CE4E5B9)
_MIX_B = np.uint64(0x94D049BB133111EB)

# distinct domains so spawned children never share a stream with bulk draws
_DOMAIN_DRAW = np.uint64(0xD1B54A32D192ED03)
_DOMAIN_SPAWN = np.uint64(0x8BB84B93962EACC9)

_INV_2_53 = float(2.0 ** -53)


def _mix64(z):
    """splitmix64 finalizer, elementwise on uint64 arrays."""
    z = (z ^ (z >> np.uint64(30))) * _MIX_A
    z = (z ^ (z >> np.uint64(27))) * _MIX_B
    return z ^ (z >> np.uint64(31))


def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


def _xoshiro_pair(s0, s1, s2, s3):
    """Two rounds of xoshiro256** over parallel lane states.

    Returns both round outputs; callers either use one stream or combine
    the pair (e.g. Box-Muller needs two independent uniforms per element).
    """
    out = []
    for _ in range(2):
        out.append(_rotl(s1 * np.uint64(5), 7) * np.uint64(9))
        t = s1 << np.uint64(17)
        s2 = s2 ^ s0
        s3 = s3 ^ s1
        s1 = s1 ^ s2
        s0 = s0 ^ s3
        s2 = s2 ^ t
        s3 = _rotl(s3, 45)
    return out[0], out[1]


class Xoshiro256:
    """Seedable generator with cheap independent substreams.

    Each bulk request derives a fresh stream key from (seed, call counter),
    expands it into per-lane xoshiro256** states via splitmix64, and runs
    the lanes in lockstep.  Draw sizes therefore do not interact: asking
    for 10 then 20 values gives the same leading 10 as asking twice for 10.
    Children created by spawn() are decorrelated from the parent by a
    separate key domain.
    """

    def __init__(self, seed):
        if not isinstance(seed, (int, np.integer)):
            raise TypeError("seed must be an integer")
        self._key = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
        self._calls = 0

    @property
    def seed(self):
        return int(self._key)

    def spawn(self, index):
        """Child generator number `index`, independent of this one."""
        if index < 0:
            raise ValueError("spawn index must be >= 0")
        with np.errstate(over="ignore"):
            child = _mix64((self._key ^ _DOMAIN_SPAWN) + np.uint64(index + 1) * _GOLDEN)
        return Xoshiro256(int(child))

    def _raw_pair(self, n):
        """n lanes, two uint64 outputs each."""
        self._calls += 1
        with np.errstate(over="ignore"):
            stream = _mix64((self._key ^ _DOMAIN_DRAW) + np.uint64(self._calls) * _GOLDEN)
            lane = _mix64(stream + (np.arange(1, n + 1, dtype=np.uint64)) * _GOLDEN)
            s0 = _mix64(lane + np.uint64(1) * _GOLDEN)
            s1 = _mix64(lane + np.uint64(2) * _GOLDEN)
            s2 = _mix64(lane + np.uint64(3) * _GOLDEN)
            s3 = _mix64(lane + np.uint64(4) * _GOLDEN)
            return _xoshiro_pair(s0, s1, s2, s3)

    @staticmethod
    def _shape_size(shape):
        if shape is None:
            return 1, None
        if isinstance(shape, (int, np.integer)):
            return int(shape), (int(shape),)
        shape = tuple(int(s) for s in shape)
        size = 1
        for s in shape:
            size *= s
        return size, shape

    def uniform(self, shape=None, low=0.0, high=1.0):
        """Floats in [low, high), float64."""
        size, shape = self._shape_size(shape)
        _, r = self._raw_pair(size)
        u = (r >> np.uint64(11)).astype(np.float64) * _INV_2_53
        out = low + u * (high - low)
        if shape is None:
            return float(out[0])
        return out.reshape(shape)

    def normal(self, shape=None, mean=0.0, sigma=1.0):
        """Gaussian draws via Box-Muller, float64."""
        size, shape = self._shape_size(shape)
        ra, rb = self._raw_pair(size)
        # u1 in (0, 1] so the log is finite
        u1 = ((ra >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53
        u2 = (rb >> np.uint64(11)).astype(np.float64) * _INV_2_53
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        out = mean + sigma * z
        if shape is None:
            return float(out[0])
        return out.reshape(shape)

    def integers(self, low, high, shape=None):
        """Integers in [low, high).  Modulo reduction; the bias is
        ~span/2**64 and irrelevant for the small spans used here."""
        low = int(low)
        high = int(high)
        if high <= low:
            raise ValueError("need high > low")
        span = np.uint64(high - low)
        size, shape = self._shape_size(shape)
        _, r = self._raw_pair(size)
        with np.errstate(over="ignore"):
            out = (r % span).astype(np.int64) + low
        if shape is None:
            return int(out[0])
        return out.reshape(shape)

    def permutation(self, n):
        """Random permutation of range(n)."""
        _, r = self._raw_pair(int(n))
        # uint64 keys collide with probability ~n^2/2^65: ignore
        return np.argsort(r, kind="stable").astype(np.int64)

    def shuffle(self, items):
        """Return `items` (a sequence) in permuted order as a list."""
        order = self.permutation(len(items))
        return [items[i] for i in order]
