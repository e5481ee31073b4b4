"""Shared fixtures and instance builders for the test suite."""

import sys

import numpy as np
import pytest

import icbalance as ic
from icbalance.balancer import TargetState, update_targets


def make_instance(seed, *, K=3, M=4, N=4, d=2, p_max=10.0, beta=1.0, **kw):
    """Random network + designed beamformers, the standard small test case."""
    cfg = ic.NetworkConfig.uniform(K=K, M=M, N=N, d=d, p_max=p_max, beta=beta, **kw)
    ch = ic.generate_channels(cfg, seed)
    bf = ic.max_sinr_alternate(ch, cfg, seed + 7)
    return cfg, ch, bf


def achieved_targets(cfg, ch, bf, powers):
    """TargetState whose per-stream targets equal the SINRs under `powers`."""
    per_user = ic.split_flat(ic.sinr_all(ch, bf, powers), cfg.d)
    beta = tuple(tuple(float(x) for x in u) for u in per_user)
    return update_targets(per_user, beta), per_user


def scale_targets(ts, factor):
    Gamma = tuple(tuple(g * factor for g in row) for row in ts.Gamma)
    common = tuple(c * factor for c in ts.Gamma_common)
    return TargetState(Gamma=Gamma, Gamma_common=common, beta_norm=ts.beta_norm)


def contractive_instance(seed, *, c_cap=0.7, load=0.8):
    """Instance whose target map is a verified contraction with an interior fixed point.

    Targets start at the equal-split achieved SINRs, get scaled down until the
    weighted max norm is below `c_cap`, then shrunk further until the exact
    fixed point fits within `load` of every user's budget.
    """
    cfg = ic.NetworkConfig.uniform(
        K=3, M=4, N=4, d=2, p_max=10.0, epsilon=1e-10, inner_limit=400
    )
    ch = ic.generate_channels(cfg, seed)
    bf = ic.max_sinr_alternate(ch, cfg, seed + 7)
    p0 = ic.PowerAllocation.equal_split(cfg)
    ts, _ = achieved_targets(cfg, ch, bf, p0)

    lim = ic.build_map(ch, bf, ts)
    c1 = ic.weighted_max_norm(lim.T, np.ones(lim.T.shape[0]))
    s = min(1.0, c_cap / c1)
    while True:
        scaled = scale_targets(ts, s)
        lim = ic.build_map(ch, bf, scaled)
        fp = ic.fixed_point_direct(lim)
        sums = [sum(part) for part in ic.split_flat(fp, cfg.d)]
        if max(su / pm for su, pm in zip(sums, cfg.p_max)) <= load:
            break
        s *= 0.7
    return cfg, ch, bf, scaled, lim, fp


@pytest.fixture(scope="session")
def small_instance():
    return make_instance(101)


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance pass/fail lines after capture is torn down."""
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULT_LINES", None) if mod else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
