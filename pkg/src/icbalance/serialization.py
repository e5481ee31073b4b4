"""Exact JSON round-trips for channels, beamformers, and target vectors.

Matrices are stored as row-major real/imag arrays of C99 hex float strings,
which round-trip IEEE-754 doubles exactly. Labels (rx, tx, user) are 1-based.
"""
from __future__ import annotations

import json

import numpy as np

from .errors import ConfigurationError
from .model import BeamformerSet, ChannelSet

CHANNEL_FORMAT = "channel-set/1"
BEAMFORMER_FORMAT = "beamformer-set/1"
TARGETS_FORMAT = "targets/1"


def _encode_matrix(m) -> dict:
    m = np.asarray(m, dtype=np.complex128)
    return {
        "shape": [int(m.shape[0]), int(m.shape[1])],
        "re": [float(x).hex() for x in m.real.ravel(order="C")],
        "im": [float(x).hex() for x in m.imag.ravel(order="C")],
    }


def _decode_matrix(d) -> np.ndarray:
    shape = tuple(d["shape"])
    re = np.array([float.fromhex(x) for x in d["re"]], dtype=np.float64)
    im = np.array([float.fromhex(x) for x in d["im"]], dtype=np.float64)
    if re.size != shape[0] * shape[1] or im.size != re.size:
        raise ConfigurationError("matrix payload does not match its shape")
    return (re + 1j * im).reshape(shape, order="C")


def channels_to_dict(cs: ChannelSet) -> dict:
    blocks = []
    for k in range(1, cs.K + 1):
        for j in range(1, cs.K + 1):
            blocks.append({"rx": k, "tx": j, **_encode_matrix(cs.block(k, j))})
    return {"format": CHANNEL_FORMAT, "K": cs.K, "blocks": blocks}


def channels_from_dict(d) -> ChannelSet:
    if d.get("format") != CHANNEL_FORMAT:
        raise ConfigurationError(f"unexpected format {d.get('format')!r}")
    K = int(d["K"])
    grid = [[None] * K for _ in range(K)]
    for b in d["blocks"]:
        grid[b["rx"] - 1][b["tx"] - 1] = _decode_matrix(b)
    if any(m is None for row in grid for m in row):
        raise ConfigurationError("channel grid is incomplete")
    return ChannelSet(H=tuple(tuple(row) for row in grid))


def beamformers_to_dict(bf: BeamformerSet) -> dict:
    users = []
    for k in range(1, bf.K + 1):
        users.append({
            "user": k,
            "U": _encode_matrix(bf.U[k - 1]),
            "V": _encode_matrix(bf.V[k - 1]),
        })
    return {"format": BEAMFORMER_FORMAT, "K": bf.K, "users": users}


def beamformers_from_dict(d) -> BeamformerSet:
    if d.get("format") != BEAMFORMER_FORMAT:
        raise ConfigurationError(f"unexpected format {d.get('format')!r}")
    users = sorted(d["users"], key=lambda u: u["user"])
    return BeamformerSet(
        U=tuple(_decode_matrix(u["U"]) for u in users),
        V=tuple(_decode_matrix(u["V"]) for u in users),
    )


def targets_to_dict(gamma_flat) -> dict:
    return {
        "format": TARGETS_FORMAT,
        "gamma": [float(x).hex() for x in np.asarray(gamma_flat, dtype=float)],
    }


def targets_from_dict(d) -> np.ndarray:
    if d.get("format") != TARGETS_FORMAT:
        raise ConfigurationError(f"unexpected format {d.get('format')!r}")
    return np.array([float.fromhex(x) for x in d["gamma"]], dtype=np.float64)


def save_json(obj: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def save_channels(cs: ChannelSet, path) -> None:
    save_json(channels_to_dict(cs), path)


def load_channels(path) -> ChannelSet:
    return channels_from_dict(load_json(path))


def save_beamformers(bf: BeamformerSet, path) -> None:
    save_json(beamformers_to_dict(bf), path)


def load_beamformers(path) -> BeamformerSet:
    return beamformers_from_dict(load_json(path))
