import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from agentstab.core import is_unit, unit_vector
from agentstab.errors import ContractViolation
from agentstab.recovery import (
    ControllerState,
    Mechanism,
    RecoveryConfig,
    RecoveryEvent,
    complete_recovery,
    engage_recovery,
    mttr_a,
    record_snapshot,
)

E1 = np.array([1.0, 0.0])
E2 = np.array([0.0, 1.0])


def fresh(cfg=None, snapshot=E2):
    cfg = cfg or RecoveryConfig()
    return cfg, ControllerState.initial(cfg, snapshot)


@pytest.mark.parametrize(
    "mode,D,tau,updated",
    [("off", 0.3, 0.5, True), ("on", 0.0, 0.5, False), ("off", 0.6, 0.5, False), ("off", None, 0.5, True)],
)
def test_record_snapshot_gate(mode, D, tau, updated):
    _, s = fresh()
    s.mode = mode
    record_snapshot(s, E1, D, tau)
    assert np.array_equal(s.stable_snapshot, E1 if updated else E2)


@pytest.mark.parametrize("beta,expected", [(0.0, E1), (1.0, E2)])
def test_rollback_extremes(beta, expected):
    cfg, s = fresh(RecoveryConfig(beta=beta))
    x, _ = engage_recovery(E1, s, cfg, t_0=4)
    assert np.array_equal(x, expected)


def test_rollback_two_dimensional_oracle():
    cfg, s = fresh(RecoveryConfig(beta=0.2))
    x, _ = engage_recovery(E1, s, cfg, t_0=4)
    n = math.sqrt(0.8**2 + 0.2**2)
    assert x == pytest.approx([0.8 / n, 0.2 / n], abs=1e-15)


@given(st.integers(0, 2**32 - 1), st.integers(2, 20), st.floats(0, 1))
def test_rollback_output_unit(seed, d, beta):
    rng = np.random.default_rng(seed)
    x, snap = unit_vector(rng.standard_normal(d)), unit_vector(rng.standard_normal(d))
    if np.allclose((1 - beta) * x + beta * snap, 0):
        return
    cfg = RecoveryConfig(beta=beta)
    out, _ = engage_recovery(x, ControllerState.initial(cfg, snap), cfg, t_0=1)
    assert is_unit(out)


def test_engage_sets_all_mechanisms():
    cfg, s = fresh(RecoveryConfig(alpha=0.35, gamma_g=0.5))
    _, s = engage_recovery(E1, s, cfg, t_0=8)
    assert s.mode == "on" and s.fallback_active
    assert s.active_gain == 0.5 * 0.35
    assert s.open_event == RecoveryEvent(8)
    with pytest.raises(ContractViolation):
        engage_recovery(E1, s, cfg, t_0=9)


def test_all_disabled_is_bookkeeping_only():
    cfg = RecoveryConfig(mechanisms=frozenset())
    s = ControllerState.initial(cfg, E2)
    x, s = engage_recovery(E1, s, cfg, t_0=3)
    assert np.array_equal(x, E1)
    assert s.active_gain == cfg.alpha and not s.fallback_active and s.mode == "on"


def test_without_drops_mechanisms():
    cfg = RecoveryConfig().without("rollback", Mechanism.TOOL_FALLBACK)
    assert cfg.mechanisms == {Mechanism.GAIN_MODULATION}


def test_complete_restores():
    cfg, s = fresh(RecoveryConfig(alpha=0.35, gamma_g=0.5))
    _, s = engage_recovery(E1, s, cfg, t_0=8)
    assert s.active_gain == pytest.approx(0.175)
    complete_recovery(s, cfg, t_r=12)
    assert s.events == [RecoveryEvent(8, 12)]
    assert s.active_gain == 0.35 and not s.fallback_active and s.mode == "off"


def test_two_cycles_and_bad_completion():
    cfg, s = fresh()
    for t0, tr in ((3, 6), (9, 15)):
        _, s = engage_recovery(E1, s, cfg, t0)
        complete_recovery(s, cfg, tr)
    assert [(e.t_0, e.t_r) for e in s.events] == [(3, 6), (9, 15)]
    with pytest.raises(ContractViolation):
        complete_recovery(s, cfg, 20)
    _, s = engage_recovery(E1, s, cfg, 22)
    with pytest.raises(ContractViolation):
        complete_recovery(s, cfg, 21)


@pytest.mark.parametrize("kw", [{"alpha": 0.0}, {"alpha": 1.5}, {"beta": -0.1}, {"beta": 1.1}, {"gamma_g": 0.0}, {"gamma_g": 2.0}])
def test_config_validation(kw):
    with pytest.raises(ContractViolation):
        RecoveryConfig(**kw)


# -- MTTR-A ---------------------------------------------------------------------------------------


@pytest.mark.parametrize(
    "events,expected",
    [
        ([(5, 9), (10, 14)], (4.0, 0.0, 2)),
        ([(5, 9), (10, 18)], (6.0, 2.0, 2)),
        ([(5, None)], None),
        ([], None),
    ],
)
def test_mttr_examples(events, expected):
    out = mttr_a([RecoveryEvent(a, b) for a, b in events])
    assert (out if out is None else tuple(out)) == expected


@given(st.lists(st.tuples(st.integers(0, 30), st.one_of(st.none(), st.integers(0, 30))), max_size=40))
def test_mttr_matches_event_log_recount(pairs):
    events = [RecoveryEvent(a, None if b is None else a + b) for a, b in pairs]
    durations = [b for _, b in pairs if b is not None]
    out = mttr_a(events)
    if not durations:
        assert out is None
        return
    n = len(durations)
    mean = sum(durations) / n
    assert out.count == n
    assert out.mean == mean
    assert out.std == math.sqrt(sum((d - mean) ** 2 for d in durations) / n)
