"""Per-substream covariances, SINR evaluation, and max-SINR beamforming.

The alternating design treats every unintended stream (other users and the
user's own remaining substreams) as interference. Receive filters are the
covariance-whitened matched filters B^{-1} h, computed in the forward network;
transmit filters come from the same rule applied in the reciprocal network
with the channel grid conjugate-transposed and the roles of U and V swapped.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import DegenerateStreamError
from .model import (
    TAG_BF_INIT,
    BeamformerSet,
    ChannelSet,
    NetworkConfig,
    PowerAllocation,
    rng_for,
)


def _hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)


def rayleigh(v: np.ndarray, a: np.ndarray) -> float:
    """Real quadratic form v^dagger A v (A Hermitian)."""
    v = np.asarray(v)
    if not np.any(v):
        raise ValueError("zero receive filter")
    return float(np.real(np.vdot(v, a @ v)))


@dataclass(frozen=True)
class CovarianceBundle:
    """Signal/interference covariances of one substream at its receiver.

    R is the powered desired-signal covariance, R_unit the unit-power version,
    Q the interference covariance, and B = Q + I the interference-plus-noise
    covariance. All Hermitian; B is positive definite because of the identity.
    """

    R: np.ndarray
    R_unit: np.ndarray
    Q: np.ndarray
    B: np.ndarray


def total_covariance(channels: ChannelSet, bf: BeamformerSet, pw: PowerAllocation, k: int):
    """Sum over j of H_kj U_j P_j U_j^dagger H_kj^dagger at receiver k (1-based)."""
    nk = channels.N[k - 1]
    total = np.zeros((nk, nk), dtype=np.complex128)
    for j in range(1, channels.K + 1):
        eff = channels.block(k, j) @ bf.U[j - 1]
        total += (eff * pw.per_user(j)) @ eff.conj().T
    return _hermitize(total)


def covariances(channels, bf, pw, k: int, l: int) -> CovarianceBundle:
    """Covariance bundle of substream (k, l); indices 1-based.

    Q is the total received covariance minus the own-stream term, so the
    user's other substreams count as interference.
    """
    h_eff = channels.block(k, k) @ bf.u(k, l)
    r_unit = _hermitize(np.outer(h_eff, h_eff.conj()))
    r = pw.get(k, l) * r_unit
    q = _hermitize(total_covariance(channels, bf, pw, k) - r)
    b = q + np.eye(q.shape[0])
    return CovarianceBundle(R=r, R_unit=r_unit, Q=q, B=b)


def sinr(channels, bf, pw, k: int, l: int) -> float:
    """SINR of substream (k, l) through receive filter v_{k,l}."""
    bun = covariances(channels, bf, pw, k, l)
    v = bf.v(k, l)
    return rayleigh(v, bun.R) / rayleigh(v, bun.B)


def sinr_all(channels, bf, pw) -> np.ndarray:
    """All substream SINRs as a flat user-major vector.

    Avoids materializing per-stream bundles: one total covariance per
    receiver, then quadratic forms.
    """
    out = []
    for k in range(1, channels.K + 1):
        total = total_covariance(channels, bf, pw, k)
        hkk = channels.block(k, k)
        p_k = pw.per_user(k)
        for l in range(1, bf.d[k - 1] + 1):
            v = bf.v(k, l)
            h = hkk @ bf.u(k, l)
            sig = p_k[l - 1] * float(np.abs(np.vdot(v, h)) ** 2)
            denom = rayleigh(v, total) + float(np.real(np.vdot(v, v))) - sig
            out.append(sig / denom)
    return np.array(out)


def mmse_receive_filter(B, h_eff) -> np.ndarray:
    """Unit-norm B^{-1} h_eff; maximizes v^dagger R v / v^dagger B v.

    B >= I for interference-plus-noise covariances, so the Cholesky
    factorization cannot fail on valid inputs.
    """
    c = cho_factor(B)
    w = cho_solve(c, np.asarray(h_eff, dtype=np.complex128))
    n = np.linalg.norm(w)
    if n == 0:
        raise DegenerateStreamError("effective channel is zero; stream is nulled")
    return w / n


def random_unit_beamformers(config: NetworkConfig, seed: int) -> BeamformerSet:
    """Random complex Gaussian columns, normalized; one RNG stream per seed."""
    rng = rng_for(seed, TAG_BF_INIT)

    def draw(rows, cols):
        g = rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))
        return g / np.linalg.norm(g, axis=0)

    U = tuple(draw(config.M[k], config.d[k]) for k in range(config.K))
    V = tuple(draw(config.N[k], config.d[k]) for k in range(config.K))
    return BeamformerSet(U=U, V=V)


def _reverse_channels(channels: ChannelSet) -> ChannelSet:
    # reciprocal network: the j -> k block is the forward k -> j block, conjugated
    K = channels.K
    return ChannelSet(H=tuple(
        tuple(channels.block(j, k).conj().T for j in range(1, K + 1))
        for k in range(1, K + 1)
    ))


def _filter_update(channels, precoders, filters, pw):
    """One half-step: recompute every receive-side filter given the precoders."""
    work = BeamformerSet(U=precoders, V=filters)
    new = []
    for k in range(1, channels.K + 1):
        total = total_covariance(channels, work, pw, k)
        hkk = channels.block(k, k)
        nk = total.shape[0]
        cols = []
        for l in range(1, work.d[k - 1] + 1):
            h = hkk @ work.u(k, l)
            r = pw.get(k, l) * np.outer(h, h.conj())
            b = _hermitize(total - r) + np.eye(nk)
            cols.append(mmse_receive_filter(b, h))
        new.append(np.stack(cols, axis=1))
    return tuple(new)


def _canonical_stream_order(channels, bf, pw):
    """Relabel each user's streams by ascending design SINR.

    A pure column permutation; makes stream indices comparable across random
    initializations (index 1 is always the weak stream of the pair).
    """
    sinrs = sinr_all(channels, bf, pw)
    U, V, start = [], [], 0
    for k in range(bf.K):
        dk = bf.d[k]
        order = np.argsort(sinrs[start:start + dk], kind="stable")
        U.append(bf.U[k][:, order])
        V.append(bf.V[k][:, order])
        start += dk
    return BeamformerSet(U=tuple(U), V=tuple(V))


def _alternate(channels, config, init_seed, record):
    bf = random_unit_beamformers(config, init_seed)
    pw = PowerAllocation.equal_split(config)
    rev = _reverse_channels(channels)
    trace = [sinr_all(channels, bf, pw)] if record else None
    for _ in range(config.bf_iters):
        bf = BeamformerSet(U=bf.U, V=_filter_update(channels, bf.U, bf.V, pw))
        bf = BeamformerSet(U=_filter_update(rev, bf.V, bf.U, pw), V=bf.V)
        if record:
            trace.append(sinr_all(channels, bf, pw))
    if config.bf_iters > 0:
        bf = _canonical_stream_order(channels, bf, pw)
        if record:
            trace[-1] = sinr_all(channels, bf, pw)
    return bf, (np.stack(trace) if record else None)


def max_sinr_alternate(channels: ChannelSet, config: NetworkConfig, init_seed: int) -> BeamformerSet:
    """Alternating max-SINR beamformer design.

    Starts from a random unit-norm initialization keyed by init_seed, runs
    config.bf_iters forward/reverse alternations with powers split equally
    (p_max_k / d_k per stream), and relabels each user's streams by ascending
    design SINR. With bf_iters = 0 the random initialization is returned
    unchanged.
    """
    bf, _ = _alternate(channels, config, init_seed, record=False)
    return bf


def max_sinr_trace(channels, config, init_seed):
    """Like max_sinr_alternate but also returns the per-alternation SINR trace.

    Returns:
        (BeamformerSet, ndarray of shape (bf_iters + 1, total_streams)); row 0
        is the random initialization, the last row the final (relabeled) design.
    """
    return _alternate(channels, config, init_seed, record=True)
