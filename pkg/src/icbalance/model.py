"""Core data model for the K-user MIMO interference network.

Conventions used throughout the package: user index k and substream index l
are 1-based at every public boundary, mirroring the usual algebraic notation;
internal storage is plain 0-based numpy. Noise variance is 1 everywhere, so
power budgets are linear SNRs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.random import PCG64, Generator, SeedSequence

from .errors import ConfigurationError

# SeedSequence ignores trailing zero words in its entropy tuple, so derived
# stream keys keep every word nonzero: distinct purpose tags, 1-based indices.
TAG_CHANNEL = 11
TAG_BF_INIT = 23
TAG_SYMBOLS = 37
TAG_NOISE = 41
TAG_SCHEDULE = 53
TAG_REALIZATION = 67
TAG_BF_SEED = 71
TAG_BER_SEED = 83


def rng_for(seed: int, *key: int) -> Generator:
    """PCG64 generator for the sub-stream addressed by (seed, *key)."""
    return Generator(PCG64(SeedSequence((int(seed),) + tuple(int(x) for x in key))))


def _int_tuple(value, K: int, name: str, minimum: int = 1) -> tuple:
    if np.isscalar(value):
        value = [value] * K
    out = tuple(int(v) for v in value)
    if len(out) != K:
        raise ConfigurationError(f"{name} needs {K} entries, got {len(out)}")
    if any(v < minimum for v in out):
        raise ConfigurationError(f"{name} entries must be >= {minimum}")
    return out


def _float_tuple(value, K: int, name: str) -> tuple:
    if np.isscalar(value):
        value = [value] * K
    out = tuple(float(v) for v in value)
    if len(out) != K:
        raise ConfigurationError(f"{name} needs {K} entries, got {len(out)}")
    return out


@dataclass(frozen=True)
class NetworkConfig:
    """Dimensions, budgets, weights, and loop tolerances for one network.

    Attributes:
        K: number of transmitter/receiver pairs.
        M: per-user transmit antenna counts.
        N: per-user receive antenna counts.
        d: per-user substream counts, 1 <= d_k <= min(M_k, N_k).
        p_max: per-user power budgets, linear scale.
        beta: per-user tuples of substream priority weights, all > 0.
        epsilon: convergence tolerance for the power loops.
        inner_limit: cap on inner power-control sweeps.
        bf_iters: beamformer alternation count.
    """

    K: int
    M: tuple
    N: tuple
    d: tuple
    p_max: tuple
    beta: tuple
    epsilon: float = 1e-3
    inner_limit: int = 100
    bf_iters: int = 16

    def __post_init__(self):
        K = int(self.K)
        if K < 1:
            raise ConfigurationError("K must be >= 1")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "M", _int_tuple(self.M, K, "M"))
        object.__setattr__(self, "N", _int_tuple(self.N, K, "N"))
        object.__setattr__(self, "d", _int_tuple(self.d, K, "d"))
        object.__setattr__(self, "p_max", _float_tuple(self.p_max, K, "p_max"))
        beta = self.beta
        if np.isscalar(beta):
            beta = [[float(beta)] * dk for dk in self.d]
        elif all(np.isscalar(b) for b in beta):
            beta = [list(beta) for _ in range(K)]
        norm = []
        for k, row in enumerate(beta):
            row = tuple(float(b) for b in row)
            if len(row) != self.d[k]:
                raise ConfigurationError(
                    f"beta for user {k + 1} needs {self.d[k]} weights, got {len(row)}"
                )
            if any(b <= 0 for b in row):
                raise ConfigurationError("beta weights must be > 0")
            norm.append(row)
        object.__setattr__(self, "beta", tuple(norm))
        for k in range(K):
            if self.d[k] > min(self.M[k], self.N[k]):
                raise ConfigurationError(
                    f"user {k + 1}: d={self.d[k]} exceeds min(M, N)="
                    f"{min(self.M[k], self.N[k])}"
                )
            if self.p_max[k] <= 0:
                raise ConfigurationError("p_max entries must be > 0")
        if not float(self.epsilon) > 0:
            raise ConfigurationError("epsilon must be > 0")
        object.__setattr__(self, "epsilon", float(self.epsilon))
        if int(self.inner_limit) < 1:
            raise ConfigurationError("inner_limit must be >= 1")
        object.__setattr__(self, "inner_limit", int(self.inner_limit))
        if int(self.bf_iters) < 0:
            raise ConfigurationError("bf_iters must be >= 0")
        object.__setattr__(self, "bf_iters", int(self.bf_iters))

    @classmethod
    def uniform(cls, K=3, M=4, N=4, d=2, p_max=10.0, beta=1.0, **kw) -> "NetworkConfig":
        """Same antennas, streams, budget, and weight profile for every user."""
        return cls(K=K, M=M, N=N, d=d, p_max=p_max, beta=beta, **kw)

    @property
    def total_streams(self) -> int:
        return sum(self.d)

    def with_budget(self, p_max) -> "NetworkConfig":
        """Copy of this config with replaced per-user budgets."""
        return NetworkConfig(
            K=self.K, M=self.M, N=self.N, d=self.d, p_max=p_max, beta=self.beta,
            epsilon=self.epsilon, inner_limit=self.inner_limit, bf_iters=self.bf_iters,
        )


def _frozen_complex(m) -> np.ndarray:
    a = np.array(m, dtype=np.complex128)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ChannelSet:
    """K x K grid of channel matrices; H[k][j] maps transmitter j to receiver k."""

    H: tuple

    def __post_init__(self):
        rows = tuple(tuple(_frozen_complex(m) for m in row) for row in self.H)
        K = len(rows)
        if K < 1 or any(len(row) != K for row in rows):
            raise ConfigurationError("channel grid must be complete (K x K)")
        for k, row in enumerate(rows):
            nk = row[0].shape[0]
            for j, m in enumerate(row):
                if m.ndim != 2:
                    raise ConfigurationError("channel blocks must be matrices")
                if m.shape[0] != nk:
                    raise ConfigurationError(f"receiver {k + 1}: inconsistent row count")
                if m.shape[1] != rows[0][j].shape[1]:
                    raise ConfigurationError(f"transmitter {j + 1}: inconsistent column count")
        object.__setattr__(self, "H", rows)

    @property
    def K(self) -> int:
        return len(self.H)

    @property
    def N(self) -> tuple:
        return tuple(row[0].shape[0] for row in self.H)

    @property
    def M(self) -> tuple:
        return tuple(m.shape[1] for m in self.H[0])

    def block(self, k: int, j: int) -> np.ndarray:
        """Channel matrix from transmitter j to receiver k (1-based)."""
        if not (1 <= k <= len(self.H)) or not (1 <= j <= len(self.H)):
            raise IndexError(f"block ({k}, {j}) outside 1..{len(self.H)}")
        return self.H[k - 1][j - 1]


@dataclass(frozen=True)
class BeamformerSet:
    """Unit-norm transmit columns U[k] (M_k x d_k) and receive columns V[k]."""

    U: tuple
    V: tuple

    def __post_init__(self):
        U = tuple(_frozen_complex(m) for m in self.U)
        V = tuple(_frozen_complex(m) for m in self.V)
        if len(U) != len(V):
            raise ConfigurationError("U and V must cover the same users")
        for name, side in (("U", U), ("V", V)):
            for k, m in enumerate(side):
                if m.ndim != 2:
                    raise ConfigurationError(f"{name}[{k + 1}] must be a matrix")
                norms = np.linalg.norm(m, axis=0)
                if np.any(np.abs(norms - 1.0) > 1e-12):
                    raise ConfigurationError(
                        f"{name}[{k + 1}] columns must be unit norm within 1e-12"
                    )
        for k in range(len(U)):
            if U[k].shape[1] != V[k].shape[1]:
                raise ConfigurationError(f"user {k + 1}: U and V stream counts differ")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)

    @property
    def K(self) -> int:
        return len(self.U)

    @property
    def d(self) -> tuple:
        return tuple(m.shape[1] for m in self.U)

    def u(self, k: int, l: int) -> np.ndarray:
        return self.U[k - 1][:, l - 1]

    def v(self, k: int, l: int) -> np.ndarray:
        return self.V[k - 1][:, l - 1]


BUDGET_SLACK = 1e-9


@dataclass(frozen=True)
class PowerAllocation:
    """Per-substream powers with per-user budget invariants."""

    p: tuple
    p_max: tuple

    def __post_init__(self):
        p = []
        for arr in self.p:
            a = np.array(arr, dtype=np.float64).reshape(-1)
            a.setflags(write=False)
            p.append(a)
        p = tuple(p)
        p_max = tuple(float(b) for b in self.p_max)
        if len(p) != len(p_max):
            raise ConfigurationError("powers and budgets must cover the same users")
        for k, a in enumerate(p):
            if np.any(a < 0):
                raise ConfigurationError(f"user {k + 1}: negative substream power")
            if float(np.sum(a)) > p_max[k] + BUDGET_SLACK:
                raise ConfigurationError(
                    f"user {k + 1}: power sum {float(np.sum(a))!r} exceeds budget {p_max[k]!r}"
                )
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "p_max", p_max)

    @classmethod
    def equal_split(cls, config: NetworkConfig) -> "PowerAllocation":
        """p_{k,l} = p_max_k / d_k for every substream."""
        return cls(
            p=tuple(np.full(dk, pk / dk) for dk, pk in zip(config.d, config.p_max)),
            p_max=config.p_max,
        )

    @classmethod
    def from_flat(cls, flat, d: Sequence[int], p_max) -> "PowerAllocation":
        return cls(p=tuple(split_flat(np.asarray(flat, dtype=float), d)), p_max=tuple(p_max))

    @property
    def K(self) -> int:
        return len(self.p)

    def per_user(self, k: int) -> np.ndarray:
        return self.p[k - 1]

    def get(self, k: int, l: int) -> float:
        return float(self.p[k - 1][l - 1])

    def flat(self) -> np.ndarray:
        return np.concatenate(self.p)

    def with_user(self, k: int, powers) -> "PowerAllocation":
        parts = list(self.p)
        parts[k - 1] = np.asarray(powers, dtype=float)
        return PowerAllocation(p=tuple(parts), p_max=self.p_max)


def generate_channels(config: NetworkConfig, seed: int) -> ChannelSet:
    """Draw the full channel grid with i.i.d. CN(0, 1) entries.

    Each (k, j) block owns its own RNG sub-stream keyed by
    (seed, TAG_CHANNEL, k, j), so per-block draws are reproducible no matter
    how calls are parallelized.

    Args:
        config: validated network dimensions.
        seed: nonnegative integer root seed.

    Returns:
        ChannelSet with H[k][j] of shape (N_k, M_j).
    """
    if int(seed) < 0:
        raise ConfigurationError("seed must be a nonnegative integer")
    rows = []
    for k in range(1, config.K + 1):
        row = []
        for j in range(1, config.K + 1):
            rng = rng_for(seed, TAG_CHANNEL, k, j)
            shape = (config.N[k - 1], config.M[j - 1])
            # real and imaginary parts N(0, 1/2) so E|h|^2 = 1
            h = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
            row.append(h)
        rows.append(tuple(row))
    return ChannelSet(H=tuple(rows))


def flatten_index(k: int, l: int, d: Sequence[int]) -> int:
    """Flat 1-based position of substream (k, l) in user-major order."""
    d = tuple(int(x) for x in d)
    if not 1 <= k <= len(d):
        raise IndexError(f"user index {k} out of range 1..{len(d)}")
    if not 1 <= l <= d[k - 1]:
        raise IndexError(f"stream index {l} out of range 1..{d[k - 1]}")
    return sum(d[: k - 1]) + l


def unflatten_index(i: int, d: Sequence[int]) -> tuple:
    """Inverse of flatten_index; returns (k, l), both 1-based."""
    d = tuple(int(x) for x in d)
    total = sum(d)
    if not 1 <= i <= total:
        raise IndexError(f"flat index {i} out of range 1..{total}")
    rem = i
    for k, dk in enumerate(d, start=1):
        if rem <= dk:
            return (k, rem)
        rem -= dk
    raise IndexError(f"flat index {i} out of range")  # unreachable


def split_flat(vec, d: Sequence[int]) -> list:
    """Split a flat user-major vector into per-user arrays."""
    vec = np.asarray(vec)
    out, start = [], 0
    for dk in d:
        out.append(vec[start:start + dk])
        start += dk
    if start != vec.shape[0]:
        raise ConfigurationError(f"flat vector length {vec.shape[0]} != sum(d) = {start}")
    return out
