"""Distributed substream power balancing.

Outer loop: set per-substream targets from the currently achieved SINRs
(weighted split of each user's SINR budget), run the capped power-control
inner loop, re-evaluate, and stop once the summed per-user fairness gap drops
below epsilon. Beamformers stay frozen throughout; only powers move.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .beamforming import covariances, rayleigh, sinr_all
from .errors import ConfigurationError, DegenerateStreamError
from .model import (
    TAG_SCHEDULE,
    NetworkConfig,
    PowerAllocation,
    rng_for,
    split_flat,
)

_GAIN_FLOOR = 1e-300


@dataclass(frozen=True)
class TargetState:
    """Per-substream SINR targets and the normalized weights behind them."""

    Gamma: tuple        # per-user arrays of substream targets
    Gamma_common: tuple  # per-user common weighted target
    beta_norm: tuple    # per-user normalized weights, each summing to 1

    def flat(self) -> np.ndarray:
        return np.concatenate(self.Gamma)


def update_targets(sinrs, beta) -> TargetState:
    """Targets for the next outer iteration from currently achieved SINRs.

    The user's SINR budget S_k is the sum of its substream SINRs; targets are
    Gamma_{k,l} = beta_norm_{k,l} * S_k. For equal weights and two streams
    this is the per-user average.
    """
    Gamma, common, bnorm = [], [], []
    for s_k, b_k in zip(sinrs, beta):
        s_k = np.asarray(s_k, dtype=float)
        b_k = np.asarray(b_k, dtype=float)
        if np.any(s_k <= 0):
            raise ConfigurationError("SINRs must be positive to form targets")
        total = float(np.sum(s_k))
        bn = b_k / float(np.sum(b_k))
        Gamma.append(bn * total)
        common.append(total / float(np.sum(b_k)))
        bnorm.append(bn)
    return TargetState(Gamma=tuple(Gamma), Gamma_common=tuple(common), beta_norm=tuple(bnorm))


def delta(channels, bf, pw, k: int, l: int) -> float:
    """Interference-to-gain ratio v^dagger B v / v^dagger R' v of stream (k, l).

    Identically equals p_{k,l} / SINR_{k,l}; independent of the stream's own
    power because B excludes the own-stream term.
    """
    bun = covariances(channels, bf, pw, k, l)
    v = bf.v(k, l)
    denom = rayleigh(v, bun.R_unit)
    if not denom > _GAIN_FLOOR:
        raise DegenerateStreamError(f"stream ({k},{l}): receive filter nulls the signal")
    return rayleigh(v, bun.B) / denom


class _DeltaEngine:
    """Sweep-rate delta evaluation with the filters frozen.

    Precomputes the cross-gain rows W[k][l, :] = |v_{k,l}^dagger H_kj u_{j,s}|^2
    once, so each sweep costs one matvec per user instead of K^2 matrix
    products. Cross-checked against delta() in the tests.
    """

    def __init__(self, channels, bf, d):
        self.d = tuple(d)
        self.K = len(self.d)
        self.W = []        # per user: (d_k, total) gain rows
        self.own = []      # per user: (d_k,) direct gains
        self.noise = []    # per user: (d_k,) v^dagger v terms
        self.offset = np.concatenate(([0], np.cumsum(self.d)))
        for k in range(1, self.K + 1):
            eff = np.hstack([channels.block(k, j) @ bf.U[j - 1]
                             for j in range(1, self.K + 1)])
            vk = bf.V[k - 1]
            w = np.abs(vk.conj().T @ eff) ** 2
            own = np.array([w[l, self.offset[k - 1] + l] for l in range(self.d[k - 1])])
            if np.any(own <= _GAIN_FLOOR):
                raise DegenerateStreamError(f"user {k}: a direct gain vanished")
            self.W.append(w)
            self.own.append(own)
            self.noise.append(np.real(np.sum(vk.conj() * vk, axis=0)))

    def deltas_user(self, p_flat, k: int) -> np.ndarray:
        i = k - 1
        own_p = p_flat[self.offset[i]:self.offset[i + 1]]
        interf = self.W[i] @ p_flat - self.own[i] * own_p
        return (interf + self.noise[i]) / self.own[i]

    def deltas(self, p_flat) -> list:
        return [self.deltas_user(p_flat, k) for k in range(1, self.K + 1)]

    def sinrs_user(self, p_flat, k: int) -> np.ndarray:
        i = k - 1
        own_p = p_flat[self.offset[i]:self.offset[i + 1]]
        return own_p / self.deltas_user(p_flat, k)


def interference_function(deltas, targets) -> np.ndarray:
    """Uncapped power-control law: elementwise Gamma * delta."""
    dl = np.concatenate([np.atleast_1d(np.asarray(x, dtype=float)) for x in np.atleast_1d(deltas)]) \
        if isinstance(deltas, (list, tuple)) else np.asarray(deltas, dtype=float)
    gm = np.concatenate([np.atleast_1d(np.asarray(x, dtype=float)) for x in np.atleast_1d(targets)]) \
        if isinstance(targets, (list, tuple)) else np.asarray(targets, dtype=float)
    if np.any(dl <= 0) or np.any(gm <= 0):
        raise ConfigurationError("deltas and targets must be positive")
    return gm * dl


def inner_power_step(deltas, targets, budget) -> np.ndarray:
    """One user's capped power update, processed in ascending-delta order.

    Each substream receives min(Gamma * delta, remaining budget); the running
    budget shrinks as substreams are served, so once the cap binds the
    remaining (larger-delta) substreams absorb exactly what is left. The
    returned powers never sum past the budget, not even by rounding.
    """
    dl = np.asarray(deltas, dtype=float)
    gm = np.asarray(targets, dtype=float)
    budget = float(budget)
    if dl.shape != gm.shape:
        raise ConfigurationError("deltas and targets must have matching shapes")
    if np.any(dl <= 0) or np.any(gm <= 0) or budget <= 0:
        raise ConfigurationError("deltas, targets, and budget must be positive")
    order = np.argsort(dl, kind="stable")  # ties go to the lower stream index
    out = np.zeros_like(dl)
    remaining = budget
    for idx in order:
        q = gm[idx] * dl[idx]
        if q >= remaining:
            q = remaining
            remaining = 0.0
        else:
            remaining -= q
        out[idx] = q
    # index-order float summation can creep past the budget by an ulp;
    # shave the largest entry, which is positive whenever the sum is
    guard = 0
    while float(np.sum(out)) > budget and guard < 8:
        j = int(np.argmax(out))
        over = float(np.sum(out)) - budget
        out[j] = max(0.0, np.nextafter(out[j] - over, 0.0))
        guard += 1
    return out


def run_inner_loop(channels, bf, targets: TargetState, config: NetworkConfig, *,
                   p_init=None, schedule: str = "sync", schedule_seed: int = 0,
                   record_trace: bool = False):
    """Capped power-control iteration at fixed targets.

    Sweeps all users until the summed l1 power change drops to epsilon or the
    sweep count hits config.inner_limit; at least one sweep always runs.
    "sync" updates every user from the previous sweep's powers; "async" walks
    users one at a time in a seed-permuted order, each seeing the latest
    powers.

    Args:
        p_init: optional per-user arrays overriding the equal-split start
            (raw arrays; may exceed budgets, the first sweep re-caps them).
        record_trace: also return the list of flat power vectors, starting
            with the initial point.

    Returns:
        (PowerAllocation, sweeps) or (PowerAllocation, sweeps, trace).
    """
    if schedule not in ("sync", "async"):
        raise ConfigurationError(f"unknown schedule {schedule!r}")
    engine = _DeltaEngine(channels, bf, config.d)
    if p_init is None:
        p_user = [np.full(dk, pk / dk) for dk, pk in zip(config.d, config.p_max)]
    else:
        p_user = [np.asarray(a, dtype=float).copy() for a in p_init]
    rng = rng_for(schedule_seed, TAG_SCHEDULE) if schedule == "async" else None
    trace = [np.concatenate(p_user)] if record_trace else None
    n = 0
    while True:
        n += 1
        prev = [a.copy() for a in p_user]
        if schedule == "sync":
            flat = np.concatenate(prev)
            dls = engine.deltas(flat)
            for k in range(1, config.K + 1):
                p_user[k - 1] = inner_power_step(
                    dls[k - 1], targets.Gamma[k - 1], config.p_max[k - 1])
        else:
            for k in rng.permutation(config.K) + 1:
                flat = np.concatenate(p_user)
                p_user[k - 1] = inner_power_step(
                    engine.deltas_user(flat, k), targets.Gamma[k - 1], config.p_max[k - 1])
        if record_trace:
            trace.append(np.concatenate(p_user))
        change = sum(float(np.sum(np.abs(a - b))) for a, b in zip(p_user, prev))
        if change <= config.epsilon or n >= config.inner_limit:
            break
    pw = PowerAllocation(p=tuple(p_user), p_max=config.p_max)
    if record_trace:
        return pw, n, trace
    return pw, n


def fairness_gap(sinrs, beta, mode: str = "weighted"):
    """Per-user gap between the mean and the minimum of the weighted SINRs.

    mode="weighted": Delta_k = mean(SINR/beta) - min(SINR/beta), zero exactly
    at every weighted-balanced point. mode="raw" keeps the unweighted minimum
    (mean(SINR/beta) - min(SINR)), which can go negative.

    Returns:
        (per-user array, total).
    """
    if mode not in ("weighted", "raw"):
        raise ConfigurationError(f"unknown fairness mode {mode!r}")
    gaps = []
    for s_k, b_k in zip(sinrs, beta):
        s_k = np.asarray(s_k, dtype=float)
        w = s_k / np.asarray(b_k, dtype=float)
        low = float(np.min(w)) if mode == "weighted" else float(np.min(s_k))
        gaps.append(float(np.mean(w)) - low)
    gaps = np.array(gaps)
    return gaps, float(np.sum(gaps))


@dataclass(frozen=True)
class _SearchTrace:
    targets: list       # TargetState per outer iteration
    sinrs: list         # flat achieved-SINR vector per outer iteration
    extras: list        # whatever evaluate returned alongside the SINRs
    converged: bool
    outer_iters: int
    final_gap: float


def linear_search(initial_sinrs, evaluate, beta, *, epsilon: float,
                  outer_limit: int = 50, delta_min_mode: str = "weighted") -> _SearchTrace:
    """Outer target-shrinking loop with an injected inner evaluator.

    evaluate(targets, m) must return (per-user achieved SINR arrays, extra);
    the search re-derives targets from each round's achievements until the
    total fairness gap is at most epsilon or outer_limit rounds have run.
    """
    if outer_limit < 1:
        raise ConfigurationError("outer_limit must be >= 1")
    sinrs = [np.asarray(s, dtype=float) for s in initial_sinrs]
    targets, sinr_tr, extras = [], [], []
    converged = False
    gap_total = np.inf
    m = 0
    while m < outer_limit:
        m += 1
        ts = update_targets(sinrs, beta)
        targets.append(ts)
        sinrs, extra = evaluate(ts, m)
        sinrs = [np.asarray(s, dtype=float) for s in sinrs]
        sinr_tr.append(np.concatenate(sinrs))
        extras.append(extra)
        _, gap_total = fairness_gap(sinrs, beta, delta_min_mode)
        if gap_total <= epsilon:
            converged = True
            break
    return _SearchTrace(targets=targets, sinrs=sinr_tr, extras=extras,
                        converged=converged, outer_iters=m, final_gap=gap_total)


@dataclass(frozen=True)
class BalanceResult:
    """Outcome of the full outer/inner balancing run."""

    powers: PowerAllocation
    sinr_initial: np.ndarray
    sinr_trace: list
    target_trace: list
    converged: bool
    outer_iters: int
    inner_iters_total: int
    fairness_gap: float

    @property
    def sinr_final(self) -> np.ndarray:
        return self.sinr_trace[-1]


def balance(channels, bf, config: NetworkConfig, *, delta_min_mode: str = "weighted",
            schedule: str = "sync", schedule_seed: int = 0,
            outer_limit: int = 50) -> BalanceResult:
    """Run the full balancing algorithm on frozen beamformers.

    Each outer iteration restarts the inner loop from the equal power split,
    so certification at the current targets applies to exactly the iteration
    that runs. Hitting the outer cap flags converged=False, never raises.
    """
    pw0 = PowerAllocation.equal_split(config)
    sinr0 = sinr_all(channels, bf, pw0)
    counters = {"inner": 0}

    def evaluate(ts, m):
        pw, iters = run_inner_loop(channels, bf, ts, config,
                                   schedule=schedule, schedule_seed=schedule_seed)
        counters["inner"] += iters
        return split_flat(sinr_all(channels, bf, pw), config.d), pw

    out = linear_search(split_flat(sinr0, config.d), evaluate, config.beta,
                        epsilon=config.epsilon, outer_limit=outer_limit,
                        delta_min_mode=delta_min_mode)
    return BalanceResult(
        powers=out.extras[-1],
        sinr_initial=sinr0,
        sinr_trace=out.sinrs,
        target_trace=[ts.flat() for ts in out.targets],
        converged=out.converged,
        outer_iters=out.outer_iters,
        inner_iters_total=counters["inner"],
        fairness_gap=out.final_gap,
    )
