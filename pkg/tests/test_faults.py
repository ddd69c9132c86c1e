import pytest
from hypothesis import given
from hypothesis import strategies as st

from apstestbed.campaign import CampaignGrid, ScenarioTemplate, draw_pairs, expand_campaign
from apstestbed.devices import SensorConfig
from apstestbed.errors import ConfigError
from apstestbed.experiment import ExperimentSpec
from apstestbed.faults import FaultInjector, FaultSpec, Trigger, apply_fault, is_active
from apstestbed.mvp import NOMINAL

clip_cgm = SensorConfig().clip


def test_hold_freezes_last_pre_window_value():
    inj = FaultInjector([FaultSpec("cgm", "hold", start=5.0, duration=10.0)])
    out = [inj.tap("cgm", v, 5.0 * i)[0] for i, v in enumerate([100.0, 105.0, 110.0, 115.0])]
    assert out == [100.0, 100.0, 100.0, 115.0]


def test_truncate_insulin():
    assert apply_fault(FaultSpec("insulin", "truncate", 0.0, 10.0), 0.05, 3.0, None) == (0.0, True)


def test_add_then_clip():
    spec = FaultSpec("cgm", "add", 0.0, 60.0, magnitude=80.0)
    assert apply_fault(spec, 120.0, 10.0, None, clip=clip_cgm)[0] == 200.0
    assert apply_fault(spec, 350.0, 10.0, None, clip=clip_cgm)[0] == 400.0


def test_zero_duration_is_identity():
    spec = FaultSpec("cgm", "truncate", 10.0, 0.0)
    for t in range(0, 30):
        assert apply_fault(spec, 123.0, float(t), 99.0) == (123.0, False)


def test_trigger_gates_activation():
    spec = FaultSpec("cgm", "add", 0.0, 100.0, magnitude=10.0, trigger=Trigger(bg_below=100.0))
    assert not is_active(spec, 5.0, {"bg": 120.0})
    assert is_active(spec, 5.0, {"bg": 80.0})
    assert not is_active(spec, 5.0, None)


def test_spec_validation():
    with pytest.raises(ValueError):
        FaultSpec("cgm", "add", 0.0, 10.0)
    with pytest.raises(ValueError):
        FaultSpec("cgm", "hold", 0.0, 10.0, magnitude=3.0)
    with pytest.raises(ValueError):
        FaultSpec("cgm", "hold", 0.0, -1.0)
    with pytest.raises(ValueError):
        FaultSpec("pancreas", "hold", 0.0, 1.0)


kinds = st.sampled_from(["truncate", "hold", "add", "sub"])
values = st.floats(39.0, 400.0)


@st.composite
def fault_specs(draw):
    kind = draw(kinds)
    mag = draw(st.floats(0.0, 200.0)) if kind in ("add", "sub") else None
    return FaultSpec("cgm", kind, draw(st.floats(0.0, 100.0)), draw(st.floats(0.0, 100.0)), mag)


@given(v=values, t=st.floats(0.0, 200.0))
def test_truncate_idempotent(v, t):
    spec = FaultSpec("cgm", "truncate", 0.0, 300.0)
    once, _ = apply_fault(spec, v, t, None)
    twice, _ = apply_fault(spec, once, t, None)
    assert once == twice == 0.0


@given(v=values, m=st.floats(0.0, 100.0))
def test_add_sub_restore_inside_range(v, m):
    add = FaultSpec("cgm", "add", 0.0, 10.0, magnitude=m)
    sub = FaultSpec("cgm", "sub", 0.0, 10.0, magnitude=m)
    up, _ = apply_fault(add, v, 1.0, None)
    back, _ = apply_fault(sub, up, 1.0, None)
    assert back == pytest.approx(v, abs=1e-12)


@given(spec=fault_specs(), stream=st.lists(values, min_size=1, max_size=40))
def test_changes_only_where_active(spec, stream):
    inj = FaultInjector([spec], clips={"cgm": clip_cgm})
    for i, v in enumerate(stream):
        t = 5.0 * i
        out, active = inj.tap("cgm", v, t)
        assert active == is_active(spec, t)
        if not active:
            assert out == v


@given(stream=st.lists(values, min_size=1, max_size=30))
def test_empty_injector_is_identity(stream):
    inj = FaultInjector([])
    assert [inj.tap("cgm", v, 5.0 * i) for i, v in enumerate(stream)] == [(v, False) for v in stream]


def _grid(n_scen, n_pairs, n_bgs, seed=3):
    base = ExperimentSpec(model="mvp", profile=NOMINAL, seed=seed)
    scen = [ScenarioTemplate("cgm", "add", float(10 * (i + 1))) for i in range(n_scen)]
    return CampaignGrid(base, tuple(scen), draw_pairs(n_pairs, seed), tuple(90.0 + 15 * i for i in range(n_bgs)))


def test_expand_sizes_and_determinism():
    specs = expand_campaign(_grid(14, 9, 7))
    assert len(specs) == 882 == _grid(14, 9, 7).size
    assert specs == expand_campaign(_grid(14, 9, 7))
    assert len({s.spec_hash() for s in specs}) == 882


def test_singleton_expansion_matches_template():
    g = _grid(1, 1, 1)
    (spec,) = expand_campaign(g)
    start, duration = g.start_duration_pairs[0]
    assert spec.faults == (g.fault_scenarios[0].at(start, duration),)
    assert spec.initial_bg == g.initial_bgs[0]
    assert spec.model == g.base.model and spec.profile == g.base.profile


def test_empty_axis_rejected():
    base = ExperimentSpec(model="mvp", profile=NOMINAL)
    with pytest.raises(ConfigError):
        CampaignGrid(base, (), ((60.0, 30.0),), (100.0,))


@given(n=st.integers(1, 30), seed=st.integers(0, 10_000))
def test_pairs_on_grid_and_in_range(n, seed):
    pairs = draw_pairs(n, seed)
    assert pairs == draw_pairs(n, seed)
    for s, d in pairs:
        assert 60 <= s <= 600 and 30 <= d <= 240
        assert s % 5 == 0 and d % 5 == 0
