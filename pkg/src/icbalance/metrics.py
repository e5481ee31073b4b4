"""Sum-rate, QPSK mapping, and uncoded Monte Carlo BER over the full link.

Detection is linear: each substream is hard-decided from v^dagger y with no
interference cancellation, so other streams act as noise exactly as in the
SINR model.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .beamforming import sinr_all
from .model import TAG_NOISE, TAG_SYMBOLS, rng_for

_SQRT2 = np.sqrt(2.0)
_BLOCK = 4096  # channel uses per RNG block; fixed so results ignore batching


def sum_rate(sinrs) -> float:
    """Sum over substreams of log2(1 + SINR), in bits per channel use."""
    s = np.asarray(sinrs, dtype=float)
    if np.any(s < 0):
        raise ValueError("SINRs must be nonnegative")
    return float(np.sum(np.log2(1.0 + s)))


def qpsk_map(bits):
    """Gray map bit pairs to unit-energy QPSK: (0,0) -> (1+1j)/sqrt(2).

    The first bit sets the sign of the real part, the second the sign of the
    imaginary part. Accepts a single pair or any array with trailing axis 2.
    """
    b = np.asarray(bits)
    if b.shape[-1] != 2:
        raise ValueError("bits must come in pairs (trailing axis of size 2)")
    sym = ((1.0 - 2.0 * b[..., 0]) + 1j * (1.0 - 2.0 * b[..., 1])) / _SQRT2
    return complex(sym) if sym.ndim == 0 else sym


def qpsk_demap(symbols):
    """Per-component sign decision, inverse of qpsk_map on clean symbols."""
    s = np.asarray(symbols)
    bits = np.stack([(s.real < 0), (s.imag < 0)], axis=-1).astype(np.int64)
    return bits


@dataclass(frozen=True)
class LinkRealization:
    """One batch of channel uses with all intermediate signals kept."""

    d_sym: tuple  # per user: (d_k, n) unit-energy symbols
    x: tuple      # per user: (M_k, n) transmitted vectors U sqrt(P) d
    z: tuple      # per receiver: (N_k, n) noise
    y: tuple      # per receiver: (N_k, n) received vectors


def draw_link_realization(channels, bf, pw, n_uses: int, seed: int,
                          noise_scale: float = 1.0) -> LinkRealization:
    """Draw symbols and noise, and propagate one batch through the network."""
    rng_d = rng_for(seed, TAG_SYMBOLS, 1)
    rng_z = rng_for(seed, TAG_NOISE, 1)
    d_sym, x = _transmit(channels, bf, pw, n_uses, rng_d)
    z, y = _receive(channels, x, n_uses, rng_z, noise_scale)
    return LinkRealization(d_sym=tuple(d_sym), x=tuple(x), z=tuple(z), y=tuple(y))


def _transmit(channels, bf, pw, n, rng):
    d_sym, x = [], []
    for k in range(1, channels.K + 1):
        dk = bf.d[k - 1]
        bits = rng.integers(0, 2, size=(dk, n, 2))
        sym = qpsk_map(bits)
        d_sym.append(sym)
        x.append((bf.U[k - 1] * np.sqrt(pw.per_user(k))) @ sym)
    return d_sym, x


def _receive(channels, x, n, rng, noise_scale):
    z, y = [], []
    for k in range(1, channels.K + 1):
        nk = channels.N[k - 1]
        noise = noise_scale * (rng.standard_normal((nk, n))
                               + 1j * rng.standard_normal((nk, n))) / _SQRT2
        # sum channel blocks in ascending j, noise last, so the natural
        # left-to-right reconstruction of y = sum_j H_kj x_j + z is bit-exact
        acc = channels.block(k, 1) @ x[0]
        for j in range(2, channels.K + 1):
            acc = acc + channels.block(k, j) @ x[j - 1]
        acc = acc + noise
        z.append(noise)
        y.append(acc)
    return z, y


@dataclass(frozen=True)
class MetricReport:
    """Per-substream SINR, rates, and measured BER for one configuration."""

    sinr: np.ndarray       # flat analytic SINRs
    rate_per_user: np.ndarray
    rate_total: float
    errors: np.ndarray     # flat bit-error counts
    bits: np.ndarray       # flat bit counts
    ber: np.ndarray        # flat per-substream BER
    ber_total: float
    n_symbols: int


def simulate_ber(channels, bf, pw, config, n_symbols: int, seed: int, *,
                 noise_scale: float = 1.0) -> MetricReport:
    """Uncoded QPSK BER over the full transmit/channel/receive chain.

    Symbols are generated in fixed-size blocks, each with its own RNG
    sub-stream keyed by (seed, tag, block), so the result is one deterministic
    function of the seed regardless of how blocks would be scheduled.
    noise_scale = 0 disables noise (detector sanity hook).
    """
    if n_symbols < 1:
        raise ValueError("n_symbols must be >= 1")
    d = bf.d
    total = sum(d)
    errors = np.zeros(total, dtype=np.int64)
    done = 0
    block_id = 0
    while done < n_symbols:
        block_id += 1
        n = min(_BLOCK, n_symbols - done)
        rng_d = rng_for(seed, TAG_SYMBOLS, block_id)
        rng_z = rng_for(seed, TAG_NOISE, block_id)
        bits_sent = []
        d_sym, x = [], []
        for k in range(1, channels.K + 1):
            bits = rng_d.integers(0, 2, size=(d[k - 1], n, 2))
            bits_sent.append(bits)
            sym = qpsk_map(bits)
            d_sym.append(sym)
            x.append((bf.U[k - 1] * np.sqrt(pw.per_user(k))) @ sym)
        _, y = _receive(channels, x, n, rng_z, noise_scale)
        pos = 0
        for k in range(1, channels.K + 1):
            est = bf.V[k - 1].conj().T @ y[k - 1]  # (d_k, n)
            got = qpsk_demap(est)
            errors[pos:pos + d[k - 1]] += np.sum(got != bits_sent[k - 1], axis=(1, 2))
            pos += d[k - 1]
        done += n
    bits_count = np.full(total, 2 * n_symbols, dtype=np.int64)
    sinrs = sinr_all(channels, bf, pw)
    rates = []
    pos = 0
    for dk in d:
        rates.append(sum_rate(sinrs[pos:pos + dk]))
        pos += dk
    return MetricReport(
        sinr=sinrs,
        rate_per_user=np.array(rates),
        rate_total=float(np.sum(rates)),
        errors=errors,
        bits=bits_count,
        ber=errors / bits_count,
        ber_total=float(np.sum(errors) / np.sum(bits_count)),
        n_symbols=int(n_symbols),
    )


def measured_sinr(channels, bf, pw, n_symbols: int, seed: int) -> np.ndarray:
    """Sample-statistic SINR: mean signal power over mean residual power.

    Splits each filtered observation v^dagger y into the known desired-signal
    component and everything else, then ratios the empirical powers.
    """
    d = bf.d
    total = sum(d)
    sig_pow = np.zeros(total)
    res_pow = np.zeros(total)
    done = 0
    block_id = 0
    while done < n_symbols:
        block_id += 1
        n = min(_BLOCK, n_symbols - done)
        rng_d = rng_for(seed, TAG_SYMBOLS, block_id)
        rng_z = rng_for(seed, TAG_NOISE, block_id)
        d_sym, x = _transmit(channels, bf, pw, n, rng_d)
        _, y = _receive(channels, x, n, rng_z, 1.0)
        pos = 0
        for k in range(1, channels.K + 1):
            est = bf.V[k - 1].conj().T @ y[k - 1]
            hkk = channels.block(k, k)
            for l in range(1, d[k - 1] + 1):
                amp = np.vdot(bf.v(k, l), hkk @ bf.u(k, l)) * np.sqrt(pw.get(k, l))
                sig = amp * d_sym[k - 1][l - 1]
                sig_pow[pos] += float(np.sum(np.abs(sig) ** 2))
                res_pow[pos] += float(np.sum(np.abs(est[l - 1] - sig) ** 2))
                pos += 1
        done += n
    return sig_pow / res_pow
