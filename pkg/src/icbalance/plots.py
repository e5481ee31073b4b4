"""Report figures rendered next to the delimited outputs.

Figures are a convenience view of the CSV/JSONL payloads; nothing reads them
back, and the CLI can skip them entirely with --no-plots.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
})


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_beamform(results, config, path):
    sinrs = np.array([r["sinr"] for r in results])
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
    axes[0].hist(sinrs.ravel(), bins=40, color="tab:blue", alpha=0.8)
    axes[0].set_xlabel("substream SINR (linear)")
    axes[0].set_ylabel("count")
    axes[0].set_title("design SINRs")
    spreads = np.array([r["spread"] for r in results])
    axes[1].hist(spreads.ravel(), bins=40, color="tab:orange", alpha=0.8)
    axes[1].set_xlabel("per-user max/min SINR")
    axes[1].set_title("substream spread")
    return _finish(fig, path)


def plot_balance(results, config, path):
    ok = [r for r in results if not r.get("skipped")]
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
    if ok:
        pre = np.array([r["ratio_pre"] for r in ok]).ravel()
        post = np.array([r["ratio_post"] for r in ok]).ravel()
        bins = np.linspace(min(1.0, pre.min()), max(pre.max(), post.max()) * 1.02, 40)
        axes[0].hist(pre, bins=bins, alpha=0.6, label="before")
        axes[0].hist(post, bins=bins, alpha=0.6, label="after")
        axes[0].set_xlabel("per-user max/min SINR")
        axes[0].set_ylabel("count")
        axes[0].legend()
        axes[0].set_title("substream ratio")
        for r in ok[:40]:
            gaps = [float(np.sum(np.asarray(s))) for s in r["targets"]]
            axes[1].plot(range(1, len(gaps) + 1), gaps, color="tab:blue", alpha=0.25)
        axes[1].set_xlabel("outer iteration")
        axes[1].set_ylabel("summed targets")
        axes[1].set_title("target shrinkage")
    return _finish(fig, path)


def _rows_lookup(rows, variant, metric):
    byx = {}
    for snr, var, met, k, l, value, count in rows:
        if var == variant and met == metric:
            byx.setdefault(float(snr), []).append((k, l, float(value)))
    xs = sorted(byx)
    return xs, byx


def plot_sweep(rows, spec, out_dir):
    import os
    paths = {}
    fig, ax = plt.subplots(figsize=(5, 3.6))
    any_ber = False
    for variant, style in (("without-balancing", "--o"), ("with-balancing", "-s")):
        xs, byx = _rows_lookup(rows, variant, "ber_total")
        ys = [byx[x][0][2] for x in xs]
        if xs:
            any_ber = True
            ax.semilogy(xs, ys, style, label=f"total, {variant}")
    if any_ber:
        # per-stream curves of user 1 show the fairness effect directly
        for variant, style in (("without-balancing", "--"), ("with-balancing", "-")):
            xs, byx = _rows_lookup(rows, variant, "ber")
            for stream in range(1, spec.config.d[0] + 1):
                ys = []
                for x in xs:
                    vals = [v for k, l, v in byx[x] if k == 1 and l == stream]
                    ys.append(vals[0] if vals else np.nan)
                ax.semilogy(xs, ys, style, alpha=0.5,
                            label=f"user 1 stream {stream}, {variant}")
        ax.set_xlabel("SNR (dB)")
        ax.set_ylabel("BER")
        ax.legend(fontsize=6)
        paths["ber_figure"] = _finish(fig, os.path.join(out_dir, "sweep_ber.png"))
    else:
        plt.close(fig)
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for variant, style in (("without-balancing", "--o"), ("with-balancing", "-s")):
        xs, byx = _rows_lookup(rows, variant, "sum_rate_mean")
        ys = [byx[x][0][2] for x in xs]
        ax.plot(xs, ys, style, label=variant)
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("mean sum-rate (bits/channel use)")
    ax.legend()
    paths["rate_figure"] = _finish(fig, os.path.join(out_dir, "sweep_sumrate.png"))
    return paths


def plot_certify(results, path):
    ok = [r for r in results if not r.get("skipped")]
    fig, ax = plt.subplots(figsize=(5, 3.4))
    if ok:
        c = np.array([r["c_ones"] for r in ok])
        rho = np.array([r["rho"] for r in ok])
        hi = max(1.05, float(np.max(c)) * 1.02, float(np.max(rho)) * 1.02)
        bins = np.linspace(0.0, hi, 40)
        ax.hist(c, bins=bins, alpha=0.6, label="row-sum norm c")
        ax.hist(rho, bins=bins, alpha=0.6, label="spectral radius")
        ax.axvline(1.0, color="k", linewidth=1, linestyle=":")
        ax.set_xlabel("modulus")
        ax.set_ylabel("count")
        ax.legend()
    return _finish(fig, path)
