"""Config-driven experiment runners behind the CLI subcommands.

Every runner is a pure function of (spec, seed): realization seeds are
derived from the root seed, workers receive only picklable inputs and
regenerate their own channels, and output rows are collected in realization
order, so results do not depend on the worker count.
"""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import yaml
from numpy.random import SeedSequence

from .balancer import balance, update_targets
from .beamforming import max_sinr_alternate, sinr_all
from .contraction import certify
from .errors import ConfigurationError, DegenerateStreamError
from .metrics import simulate_ber, sum_rate
from .model import (
    TAG_BER_SEED,
    TAG_BF_SEED,
    TAG_REALIZATION,
    NetworkConfig,
    PowerAllocation,
    generate_channels,
    split_flat,
)
from . import serialization as ser

PAPER_SWEEP_COUNTS = (10 ** 3, 10 ** 4, 10 ** 5, 10 ** 6)
PAPER_SINGLE_COUNT = 10 ** 4


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment: network shape plus sweep/realization/flag settings."""

    name: str
    config: NetworkConfig
    snr_db: tuple
    realizations: int
    seed: int
    ber: bool = True
    symbols: int = 1000
    async_schedule: bool = False
    delta_min_mode: str = "weighted"
    scale: str = "desk"

    def __post_init__(self):
        if self.realizations < 1:
            raise ConfigurationError("realizations must be >= 1")
        if len(self.snr_db) == 0:
            raise ConfigurationError("snr_db must be non-empty")
        if self.symbols < 1:
            raise ConfigurationError("symbols must be >= 1")
        if self.delta_min_mode not in ("weighted", "raw"):
            raise ConfigurationError(f"unknown delta_min_mode {self.delta_min_mode!r}")
        if self.scale not in ("desk", "paper"):
            raise ConfigurationError(f"unknown scale {self.scale!r}")
        if int(self.seed) < 0:
            raise ConfigurationError("seed must be nonnegative")

    @property
    def schedule(self) -> str:
        return "async" if self.async_schedule else "sync"

    def config_at_snr(self, snr_db: float) -> NetworkConfig:
        return self.config.with_budget(10.0 ** (float(snr_db) / 10.0))

    def counts_per_snr(self) -> list:
        if self.scale == "paper":
            return [PAPER_SWEEP_COUNTS[min(i, len(PAPER_SWEEP_COUNTS) - 1)]
                    for i in range(len(self.snr_db))]
        return [self.realizations] * len(self.snr_db)

    def single_count(self) -> int:
        return max(self.realizations, PAPER_SINGLE_COUNT) if self.scale == "paper" \
            else self.realizations


_NETWORK_KEYS = {"K", "M", "N", "d", "beta", "p_max", "p_max_db",
                 "epsilon", "inner_limit", "bf_iters"}
_SPEC_KEYS = {"name", "network", "snr_db", "realizations", "seed", "ber",
              "symbols_per_realization", "async_schedule", "delta_min_mode"}


def spec_from_dict(raw: dict) -> ExperimentSpec:
    if not isinstance(raw, dict):
        raise ConfigurationError("experiment config must be a mapping")
    unknown = set(raw) - _SPEC_KEYS
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    net = dict(raw.get("network") or {})
    unknown = set(net) - _NETWORK_KEYS
    if unknown:
        raise ConfigurationError(f"unknown network keys: {sorted(unknown)}")
    snr_db = tuple(float(s) for s in raw.get("snr_db", (10.0,)))
    if not snr_db:
        raise ConfigurationError("snr_db must be non-empty")
    if "p_max" in net and "p_max_db" in net:
        raise ConfigurationError("give p_max or p_max_db, not both")
    if "p_max_db" in net:
        pm = net.pop("p_max_db")
        net["p_max"] = [10.0 ** (float(x) / 10.0) for x in np.atleast_1d(pm)]
        if len(net["p_max"]) == 1:
            net["p_max"] = net["p_max"][0]
    elif "p_max" not in net:
        net["p_max"] = 10.0 ** (snr_db[0] / 10.0)
    beta = net.get("beta", "equal")
    if isinstance(beta, str):
        if beta != "equal":
            raise ConfigurationError(f"unknown weight profile {beta!r}")
        net["beta"] = 1.0
    try:
        config = NetworkConfig(
            K=net.get("K", 3), M=net.get("M", 4), N=net.get("N", 4),
            d=net.get("d", 2), p_max=net["p_max"], beta=net.get("beta", 1.0),
            epsilon=net.get("epsilon", 1e-3),
            inner_limit=net.get("inner_limit", 100),
            bf_iters=net.get("bf_iters", 16),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad network settings: {exc}") from exc
    return ExperimentSpec(
        name=str(raw.get("name", "adhoc")),
        config=config,
        snr_db=snr_db,
        realizations=int(raw.get("realizations", 100)),
        seed=int(raw.get("seed", 1)),
        ber=bool(raw.get("ber", True)),
        symbols=int(raw.get("symbols_per_realization", 1000)),
        async_schedule=bool(raw.get("async_schedule", False)),
        delta_min_mode=str(raw.get("delta_min_mode", "weighted")),
    )


def spec_from_yaml(path) -> ExperimentSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
    return spec_from_dict(raw or {})


def default_spec(command: str) -> ExperimentSpec:
    base = {"name": f"default-{command}", "realizations": 100, "seed": 1}
    if command == "sweep":
        base["snr_db"] = [0.0, 5.0, 10.0, 15.0]
    else:
        base["snr_db"] = [10.0]
    return spec_from_dict(base)


def apply_overrides(spec: ExperimentSpec, *, seed=None, realizations=None,
                    async_schedule=None, delta_min_mode=None, scale=None) -> ExperimentSpec:
    kw = {}
    if seed is not None:
        kw["seed"] = int(seed)
    if realizations is not None:
        kw["realizations"] = int(realizations)
    if async_schedule:
        kw["async_schedule"] = True
    if delta_min_mode is not None:
        kw["delta_min_mode"] = delta_min_mode
    if scale is not None:
        kw["scale"] = scale
    return replace(spec, **kw) if kw else spec


def derive_seed(root: int, tag: int, rid: int) -> int:
    """Stable per-realization integer seed (rid is 1-based)."""
    ss = SeedSequence((int(root), int(tag), int(rid)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def realization_seeds(spec: ExperimentSpec, rid: int) -> tuple:
    return (derive_seed(spec.seed, TAG_REALIZATION, rid),
            derive_seed(spec.seed, TAG_BF_SEED, rid),
            derive_seed(spec.seed, TAG_BER_SEED, rid))


def _map(fn, tasks, workers: int):
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (workers * 4))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks, chunksize=chunk))


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, (np.floating,)):
        return repr(float(x))
    if x is None:
        return ""
    return str(x)


def write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")


def _stream_labels(d) -> list:
    return [(k, l) for k in range(1, len(d) + 1) for l in range(1, d[k - 1] + 1)]


def _ratios(flat, d) -> list:
    return [float(np.max(s) / np.min(s)) for s in split_flat(np.asarray(flat), d)]


# ---------------------------------------------------------------- beamform

def _beamform_task(args):
    rid, config, ch_seed, bf_seed, keep_artifacts = args
    channels = generate_channels(config, ch_seed)
    bf = max_sinr_alternate(channels, config, bf_seed)
    pw = PowerAllocation.equal_split(config)
    s = sinr_all(channels, bf, pw)
    out = {
        "rid": rid, "channel_seed": ch_seed, "bf_seed": bf_seed,
        "sinr": [float(x) for x in s],
        "spread": _ratios(s, config.d),
    }
    if keep_artifacts:
        out["channels"] = ser.channels_to_dict(channels)
        out["beamformers"] = ser.beamformers_to_dict(bf)
    return out


def run_beamform(spec: ExperimentSpec, out_dir, *, workers: int = 1,
                 write_artifacts: bool = True, make_plots: bool = True) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    config = spec.config
    count = spec.single_count()
    tasks = [(rid, config, *realization_seeds(spec, rid)[:2], write_artifacts)
             for rid in range(1, count + 1)]
    results = _map(_beamform_task, tasks, workers)
    art_dir = os.path.join(out_dir, "artifacts")
    if write_artifacts:
        os.makedirs(art_dir, exist_ok=True)
        for r in results:
            ser.save_json(r.pop("channels"), os.path.join(art_dir, f"channels_r{r['rid']:04d}.json"))
            ser.save_json(r.pop("beamformers"), os.path.join(art_dir, f"beamformers_r{r['rid']:04d}.json"))
    labels = _stream_labels(config.d)
    header = (["realization", "channel_seed", "bf_seed"]
              + [f"sinr_{k}_{l}" for k, l in labels]
              + [f"spread_{k}" for k in range(1, config.K + 1)])
    rows = [[r["rid"], r["channel_seed"], r["bf_seed"], *r["sinr"], *r["spread"]]
            for r in results]
    csv_path = os.path.join(out_dir, "beamform_summary.csv")
    write_csv(csv_path, header, rows)
    paths = {"summary": csv_path}
    if write_artifacts:
        paths["artifacts"] = art_dir
    if make_plots:
        from . import plots
        paths["figure"] = plots.plot_beamform(results, config, os.path.join(out_dir, "beamform_sinr.png"))
    return {"paths": paths, "results": results}


# ----------------------------------------------------------------- balance

def _balance_task(args):
    rid, config, ch_seed, bf_seed, mode, schedule, outer_limit, with_certs, art = args
    try:
        if art is None:
            channels = generate_channels(config, ch_seed)
            bf = max_sinr_alternate(channels, config, bf_seed)
        else:
            channels = ser.channels_from_dict(art[0])
            bf = ser.beamformers_from_dict(art[1])
        res = balance(channels, bf, config, delta_min_mode=mode,
                      schedule=schedule, schedule_seed=bf_seed, outer_limit=outer_limit)
    except DegenerateStreamError as exc:
        return {"rid": rid, "channel_seed": ch_seed, "skipped": True, "reason": str(exc)}
    certs = []
    if with_certs:
        for m, tvec in enumerate(res.target_trace, start=1):
            cert = certify(channels, bf, tvec)
            certs.append({"outer": m, "c": float(cert.c), "rho": float(cert.rho),
                          "contractive": bool(cert.contractive)})
    return {
        "rid": rid, "channel_seed": ch_seed, "bf_seed": bf_seed, "skipped": False,
        "converged": bool(res.converged),
        "outer_iters": int(res.outer_iters),
        "inner_iters": int(res.inner_iters_total),
        "fairness_gap": float(res.fairness_gap),
        "pre_sinr": [float(x) for x in res.sinr_initial],
        "post_sinr": [float(x) for x in res.sinr_final],
        "ratio_pre": _ratios(res.sinr_initial, config.d),
        "ratio_post": _ratios(res.sinr_final, config.d),
        "sum_rate_pre": sum_rate(res.sinr_initial),
        "sum_rate_post": sum_rate(res.sinr_final),
        "powers": [float(x) for x in res.powers.flat()],
        "targets": [[float(x) for x in t] for t in res.target_trace],
        "sinr_trace": [[float(x) for x in s] for s in res.sinr_trace],
        "certs": certs,
    }


def run_balance(spec: ExperimentSpec, out_dir, *, workers: int = 1,
                make_plots: bool = True, with_certs: bool = True,
                outer_limit: int = 50, artifacts_dir=None) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    config = spec.config
    if artifacts_dir is None:
        count = spec.single_count()
        tasks = [(rid, config, *realization_seeds(spec, rid)[:2], spec.delta_min_mode,
                  spec.schedule, outer_limit, with_certs, None)
                 for rid in range(1, count + 1)]
    else:
        tasks = []
        for rid, chan_d, bf_d in _iter_artifacts(artifacts_dir):
            tasks.append((rid, config, 0, derive_seed(spec.seed, TAG_BF_SEED, rid),
                          spec.delta_min_mode, spec.schedule, outer_limit,
                          with_certs, (chan_d, bf_d)))
        if not tasks:
            raise ConfigurationError(f"no artifacts found under {artifacts_dir}")
    results = _map(_balance_task, tasks, workers)
    labels = _stream_labels(config.d)
    header = (["realization", "channel_seed", "skipped", "converged", "outer_iters",
               "inner_iters", "fairness_gap"]
              + [f"pre_sinr_{k}_{l}" for k, l in labels]
              + [f"post_sinr_{k}_{l}" for k, l in labels]
              + [f"ratio_pre_{k}" for k in range(1, config.K + 1)]
              + [f"ratio_post_{k}" for k in range(1, config.K + 1)]
              + ["sum_rate_pre", "sum_rate_post"])
    blank = len(labels) * 2 + config.K * 2 + 2
    rows = []
    trace_records = []
    for r in results:
        if r.get("skipped"):
            rows.append([r["rid"], r["channel_seed"], True] + [None] * (4 + blank - 2))
            trace_records.append({"realization": r["rid"], "skipped": True,
                                  "reason": r["reason"]})
            continue
        rows.append([r["rid"], r["channel_seed"], False, r["converged"],
                     r["outer_iters"], r["inner_iters"], r["fairness_gap"],
                     *r["pre_sinr"], *r["post_sinr"], *r["ratio_pre"], *r["ratio_post"],
                     r["sum_rate_pre"], r["sum_rate_post"]])
        for m in range(len(r["targets"])):
            rec = {"realization": r["rid"], "outer": m + 1,
                   "targets": r["targets"][m], "sinr": r["sinr_trace"][m]}
            if r["certs"]:
                rec["certificate"] = r["certs"][m]
            if m + 1 == len(r["targets"]):
                rec["powers"] = r["powers"]
                rec["converged"] = r["converged"]
                rec["fairness_gap"] = r["fairness_gap"]
            trace_records.append(rec)
    csv_path = os.path.join(out_dir, "balance_summary.csv")
    jsonl_path = os.path.join(out_dir, "balance_trace.jsonl")
    write_csv(csv_path, header, rows)
    write_jsonl(jsonl_path, trace_records)
    paths = {"summary": csv_path, "trace": jsonl_path}
    if make_plots:
        from . import plots
        paths["figure"] = plots.plot_balance(results, config, os.path.join(out_dir, "balance_summary.png"))
    return {"paths": paths, "results": results}


def _iter_artifacts(art_dir):
    try:
        names = sorted(os.listdir(art_dir))
    except FileNotFoundError as exc:
        raise ConfigurationError(f"artifacts directory {art_dir} does not exist") from exc
    for name in names:
        if not (name.startswith("channels_r") and name.endswith(".json")):
            continue
        rid = int(name[len("channels_r"):-len(".json")])
        chan = ser.load_json(os.path.join(art_dir, name))
        bf_path = os.path.join(art_dir, f"beamformers_r{rid:04d}.json")
        if not os.path.exists(bf_path):
            raise ConfigurationError(f"missing beamformers for realization {rid}")
        yield rid, chan, ser.load_json(bf_path)


# ------------------------------------------------------------------- sweep

def _sweep_task(args):
    (rid, config, ch_seed, bf_seed, ber_seed, do_ber, symbols, mode, schedule) = args
    channels = generate_channels(config, ch_seed)
    bf = max_sinr_alternate(channels, config, bf_seed)
    pw0 = PowerAllocation.equal_split(config)
    pre = sinr_all(channels, bf, pw0)
    res = balance(channels, bf, config, delta_min_mode=mode,
                  schedule=schedule, schedule_seed=bf_seed)
    out = {
        "rid": rid,
        "converged": bool(res.converged),
        "pre_sinr": [float(x) for x in pre],
        "post_sinr": [float(x) for x in res.sinr_final],
        "rate_pre": sum_rate(pre),
        "rate_post": sum_rate(res.sinr_final),
    }
    if do_ber:
        rep0 = simulate_ber(channels, bf, pw0, config, symbols, ber_seed)
        rep1 = simulate_ber(channels, bf, res.powers, config, symbols, ber_seed)
        out["errors_pre"] = [int(x) for x in rep0.errors]
        out["errors_post"] = [int(x) for x in rep1.errors]
        out["bits"] = [int(x) for x in rep0.bits]
    return out


def run_sweep(spec: ExperimentSpec, out_dir, *, workers: int = 1,
              make_plots: bool = True) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    counts = spec.counts_per_snr()
    rows = []
    per_snr = {}
    for idx, snr in enumerate(spec.snr_db):
        config = spec.config_at_snr(snr)
        tasks = [(rid, config, *realization_seeds(spec, rid), spec.ber, spec.symbols,
                  spec.delta_min_mode, spec.schedule)
                 for rid in range(1, counts[idx] + 1)]
        results = _map(_sweep_task, tasks, workers)
        per_snr[snr] = results
        labels = _stream_labels(config.d)
        pre = np.array([r["pre_sinr"] for r in results])
        post = np.array([r["post_sinr"] for r in results])
        n = len(results)
        for variant, s in (("without-balancing", pre), ("with-balancing", post)):
            for col, (k, l) in enumerate(labels):
                rows.append([snr, variant, "sinr_mean", k, l, float(np.mean(s[:, col])), n])
        rows.append([snr, "without-balancing", "sum_rate_mean", None, None,
                     float(np.mean([r["rate_pre"] for r in results])), n])
        rows.append([snr, "with-balancing", "sum_rate_mean", None, None,
                     float(np.mean([r["rate_post"] for r in results])), n])
        rows.append([snr, "with-balancing", "converged_frac", None, None,
                     float(np.mean([r["converged"] for r in results])), n])
        if spec.ber:
            bits = np.array([r["bits"] for r in results])
            for variant, key in (("without-balancing", "errors_pre"),
                                 ("with-balancing", "errors_post")):
                errs = np.array([r[key] for r in results])
                for col, (k, l) in enumerate(labels):
                    rows.append([snr, variant, "ber", k, l,
                                 float(np.sum(errs[:, col]) / np.sum(bits[:, col])),
                                 int(np.sum(bits[:, col]))])
                rows.append([snr, variant, "ber_total", None, None,
                             float(np.sum(errs) / np.sum(bits)), int(np.sum(bits))])
    header = ["snr_db", "variant", "metric", "user", "stream", "value", "count"]
    csv_path = os.path.join(out_dir, "sweep_summary.csv")
    write_csv(csv_path, header, rows)
    paths = {"summary": csv_path}
    if make_plots:
        from . import plots
        paths.update(plots.plot_sweep(rows, spec, out_dir))
    return {"paths": paths, "rows": rows, "per_snr": per_snr}


# ----------------------------------------------------------------- certify

def _certify_task(args):
    rid, config, ch_seed, bf_seed, target_scale, art = args
    try:
        if art is None:
            channels = generate_channels(config, ch_seed)
            bf = max_sinr_alternate(channels, config, bf_seed)
            pw0 = PowerAllocation.equal_split(config)
            gamma = update_targets(split_flat(sinr_all(channels, bf, pw0), config.d),
                                   config.beta).flat()
        else:
            channels = ser.channels_from_dict(art[0])
            bf = ser.beamformers_from_dict(art[1])
            if art[2] is not None:
                gamma = ser.targets_from_dict(art[2])
            else:
                budgets = config.p_max if len(config.p_max) == channels.K \
                    else (config.p_max[0],) * channels.K
                pw0 = PowerAllocation(
                    p=tuple(np.full(dk, b / dk) for dk, b in zip(bf.d, budgets)),
                    p_max=budgets)
                beta = config.beta if config.d == bf.d else tuple((1.0,) * dk for dk in bf.d)
                gamma = update_targets(split_flat(sinr_all(channels, bf, pw0), bf.d),
                                       beta).flat()
        gamma = gamma * float(target_scale)
        cert1 = certify(channels, bf, gamma)
        certp = certify(channels, bf, gamma, v="perron")
    except DegenerateStreamError as exc:
        return {"rid": rid, "skipped": True, "reason": str(exc)}
    return {
        "rid": rid, "channel_seed": ch_seed, "skipped": False,
        "target_scale": float(target_scale),
        "targets": [float(x) for x in gamma],
        "c_ones": float(cert1.c), "c_perron": float(certp.c),
        "rho": float(cert1.rho),
        "contractive": bool(cert1.contractive),
        "feasible": bool(cert1.rho < 1.0),
        "fixed_point": None if cert1.fixed_point is None
        else [float(x) for x in cert1.fixed_point],
        "v_perron": [float(x) for x in certp.v_norm],
    }


def run_certify(spec: ExperimentSpec, out_dir, *, workers: int = 1,
                target_scale: float = 1.0, artifacts_dir=None,
                make_plots: bool = True) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    config = spec.config
    if artifacts_dir is None:
        count = spec.single_count()
        tasks = [(rid, config, *realization_seeds(spec, rid)[:2], target_scale, None)
                 for rid in range(1, count + 1)]
    else:
        tasks = []
        for rid, chan_d, bf_d in _iter_artifacts(artifacts_dir):
            tpath = os.path.join(artifacts_dir, f"targets_r{rid:04d}.json")
            tgt = ser.load_json(tpath) if os.path.exists(tpath) else None
            tasks.append((rid, config, 0, 0, target_scale, (chan_d, bf_d, tgt)))
        if not tasks:
            raise ConfigurationError(f"no artifacts found under {artifacts_dir}")
    results = _map(_certify_task, tasks, workers)
    header = ["realization", "channel_seed", "skipped", "target_scale",
              "c_ones", "c_perron", "rho", "contractive", "feasible"]
    rows = []
    for r in results:
        if r.get("skipped"):
            rows.append([r["rid"], None, True, None, None, None, None, None, None])
        else:
            rows.append([r["rid"], r["channel_seed"], False, r["target_scale"],
                         r["c_ones"], r["c_perron"], r["rho"], r["contractive"],
                         r["feasible"]])
    csv_path = os.path.join(out_dir, "certify_summary.csv")
    write_csv(csv_path, header, rows)
    jsonl_path = os.path.join(out_dir, "certify_records.jsonl")
    write_jsonl(jsonl_path, results)
    paths = {"summary": csv_path, "records": jsonl_path}
    if make_plots:
        from . import plots
        paths["figure"] = plots.plot_certify(results, os.path.join(out_dir, "certify_summary.png"))
    return {"paths": paths, "results": results}
