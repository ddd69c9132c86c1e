"""End-to-end acceptance checks; each prints one PASS/FAIL line (also repeated in the session summary)."""

import time
from dataclasses import replace

import numpy as np
import pytest

from apstestbed import io
from apstestbed.analytics import compute_outcomes
from apstestbed.campaign import expand_campaign, grid_from_doc, run_campaign, run_specs
from apstestbed.controllers import controller_config_for
from apstestbed.devices import SensorConfig
from apstestbed.engine import column, initial_basal, replay_bg, replay_insulin, run_closed_loop
from apstestbed.experiment import ExperimentSpec, cohort
from apstestbed.faults import FaultInjector, FaultSpec, apply_fault
from apstestbed.mvp import NOMINAL, steady_state_bg
from apstestbed.sysid import FitData, FitSpec, fit_profile, replay_mse, synthetic_trace
from apstestbed.uva import NOMINAL as UVA_NOMINAL
from apstestbed.uva import uva_observe_bg, uva_steady_state

RESULTS: dict[int, str] = {}
QUIET = SensorConfig(noise_sd=0.0)


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


def test_criterion_1_steady_state():
    lines, ok = [], True
    for model, profile in (("mvp", NOMINAL), ("uva", UVA_NOMINAL)):
        s = ExperimentSpec(model=model, profile=profile, controller="fixed_basal", sensor=QUIET, duration=1440.0)
        rate = initial_basal(s)
        if model == "mvp":
            fixed = steady_state_bg(profile, rate / 60 * 1e6)
            start, tol = fixed, 0.5
        else:
            fixed = uva_observe_bg(uva_steady_state(profile, rate / 60 * 6000), profile)
            start, tol = fixed, 1.0
        t0 = time.perf_counter()
        bg = column(run_closed_loop(replace(s, initial_bg=start)), "bg_true")
        elapsed = time.perf_counter() - t0
        err = float(np.max(np.abs(bg - fixed)))
        ok &= err < tol and elapsed < 1.0
        lines.append(f"{model} max|bg-fixed|={err:.2e} (<{tol}) in {elapsed:.3f}s")
    report(1, ok, "; ".join(lines))


def test_criterion_2_sysid_round_trip():
    t0 = time.perf_counter()
    names = ("egp", "gezi", "s_i")
    truth = np.array([getattr(NOMINAL, k) for k in names])
    recs, _ = synthetic_trace(NOMINAL, days=11, seed=0)
    clean = fit_profile(FitSpec(), FitData.from_records(recs))
    clean_err = np.abs(np.array([getattr(clean.profile, k) for k in names]) / truth - 1)

    noisy_err, noisy_mse = [], []
    for seed in range(10):
        recs, _ = synthetic_trace(NOMINAL, days=11, seed=seed, noise_sd=2.0)
        fit = fit_profile(FitSpec(), FitData.from_records(recs))
        noisy_err.append(np.abs(np.array([getattr(fit.profile, k) for k in names]) / truth - 1))
        true_bg = FitData.from_records(recs, observed="bg_true")
        noisy_mse.append(replay_mse(fit.profile, true_bg, start=2880))
    mean_err = np.mean(noisy_err, axis=0)
    elapsed = time.perf_counter() - t0
    ok = clean_err.max() < 0.02 and mean_err.max() < 0.10 and clean.eval_mse < 1.0 and elapsed < 10.0
    report(2, ok, f"noiseless max rel err {clean_err.max():.2e}, eval MSE {clean.eval_mse:.2e}; "
                  f"sd=2 mean rel err {np.round(mean_err, 4).tolist()}, eval MSE vs true BG "
                  f"{np.mean(noisy_mse):.3f}; {elapsed:.1f}s")


def _basal_bolus_oracle(bg, cho, profile):
    """Weight-based basal plus meal/correction bolus, written out from the dosing rules."""
    tdd = 0.55 * profile.bw
    cr, cf = 450.0 / tdd, 1700.0 / tdd
    basal_u_min = profile.u_2ss * profile.bw / 6000.0
    out = np.empty(len(bg))
    for k, (g, c) in enumerate(zip(bg, cho)):
        bolus = 0.0
        if c > 0:
            bolus = c / cr + ((g - 120.0) / cf if g > 150.0 else 0.0)
            bolus = min(max(bolus, 0.0), 15.0)
        out[k] = basal_u_min + bolus / 5.0
    return out


def test_criterion_3_basal_bolus_oracle():
    rng = np.random.default_rng(2024)
    n = 1000
    bg = rng.uniform(40.0, 400.0, n)
    cho = np.where(rng.random(n) < 0.3, rng.uniform(5.0, 150.0, n), 0.0)
    meals = [(5.0 * k, float(c)) for k, c in enumerate(cho) if c > 0]
    worst = 0.0
    for profile in (UVA_NOMINAL, *cohort("uva", 4, 1)):
        cfg = controller_config_for(profile)
        got = replay_bg("basal_bolus", cfg, bg, meals)
        mse = float(np.mean((got - _basal_bolus_oracle(bg, cho, profile)) ** 2))
        worst = max(worst, mse)
    report(3, worst < 1e-12, f"worst insulin MSE over 5 profiles x {n} inputs = {worst:.3e}")


def test_criterion_4_controller_ordering():
    t0 = time.perf_counter()
    tir = {}
    members = cohort("mvp", 20, 7)
    for ctl in ("openaps", "basal_bolus", "fixed_basal"):
        traces = [run_closed_loop(ExperimentSpec(model="mvp", profile=p, controller=ctl, meals=((60.0, 50.0),),
                                                 duration=750.0, seed=i))
                  for i, p in enumerate(members)]
        tir[ctl] = compute_outcomes(traces).pct_in_range
    elapsed = time.perf_counter() - t0
    o, b, f = tir["openaps"], tir["basal_bolus"], tir["fixed_basal"]
    ok = o >= b >= f and o - f >= 5 and b - f >= 5 and elapsed < 30
    report(4, ok, f"TIR openaps {o:.2f} / basal-bolus {b:.2f} / fixed {f:.2f} "
                  f"(need openaps >= basal-bolus >= fixed, +5 over fixed); {elapsed:.1f}s")


@pytest.mark.slow
def test_criterion_5_fault_grid(tmp_path):
    lines, ok = [], True
    for model in ("mvp", "uva"):
        doc, base = io.load_experiment_doc(f"default_campaign_{model}.json")
        specs = expand_campaign(grid_from_doc(doc, base))
        t0 = time.perf_counter()
        faulted = run_campaign(specs, tmp_path / model, parallelism=8)
        elapsed = time.perf_counter() - t0
        clean = run_campaign([s.without_faults() for s in specs], tmp_path / model, parallelism=8,
                             report_name="report-clean")
        traces = list((tmp_path / model / "traces").glob("*.csv"))
        f, c = faulted["overall"]["hazard_rate"], clean["overall"]["hazard_rate"]
        ok &= len(specs) == 882 == faulted["overall"]["runs"] and 0 < f < 100 and f > c and elapsed < 300
        lines.append(f"{model}: {len(specs)} runs, hazard {f:.2f}% faulted vs {c:.2f}% clean, "
                     f"{len(traces)} trace files, grid {elapsed:.0f}s")
    report(5, ok, "; ".join(lines))


def test_criterion_6_fault_semantics():
    clip = SensorConfig().clip
    inj = FaultInjector([FaultSpec("cgm", "hold", 5.0, 10.0)])
    hold = [inj.tap("cgm", v, 5.0 * i)[0] for i, v in enumerate([100.0, 105.0, 110.0, 115.0])]
    add = FaultSpec("cgm", "add", 0.0, 10.0, 80.0)
    checks = {
        "hold": hold == [100.0, 100.0, 100.0, 115.0],
        "truncate": apply_fault(FaultSpec("insulin", "truncate", 0.0, 10.0), 0.05, 1.0, None)[0] == 0.0,
        "add": apply_fault(add, 120.0, 1.0, None, clip=clip)[0] == 200.0,
        "add-clip": apply_fault(add, 350.0, 1.0, None, clip=clip)[0] == 400.0,
        "zero-duration": all(apply_fault(FaultSpec("cgm", "truncate", 5.0, 0.0), 90.0, t, 1.0)[0] == 90.0
                             for t in np.arange(0.0, 20.0, 0.5)),
    }
    spec = io.load_experiment("nominal_mvp.json")
    a = io.trace_csv(run_closed_loop(replace(spec, faults=())), spec.to_dict())
    b = io.trace_csv(run_closed_loop(spec), spec.to_dict())
    checks["no-fault identity"] = a == b and not spec.faults
    report(6, all(checks.values()), ", ".join(f"{k}={'ok' if v else 'BAD'}" for k, v in checks.items()))


def test_criterion_7_determinism_and_closure(tmp_path):
    doc, base = io.load_experiment_doc("default_campaign_uva.json")
    specs = expand_campaign(grid_from_doc(doc, base))[::22]
    run_specs(specs, tmp_path / "p1", parallelism=1)
    run_specs(specs, tmp_path / "p8", parallelism=8)
    names = sorted(p.name for p in (tmp_path / "p1" / "traces").iterdir())
    same = names == sorted(p.name for p in (tmp_path / "p8" / "traces").iterdir()) and all(
        (tmp_path / "p1" / "traces" / n).read_bytes() == (tmp_path / "p8" / "traces" / n).read_bytes()
        for n in names)

    exact = True
    for model, profile in (("mvp", cohort("mvp", 20, 7)[3]), ("uva", cohort("uva", 20, 7)[3])):
        for ctl in ("openaps", "basal_bolus", "fixed_basal"):
            s = ExperimentSpec(model=model, profile=profile, controller=ctl, meals=((60.0, 50.0), (400.0, 30.0)),
                               sensor=QUIET)
            trace = run_closed_loop(s)
            bg = replay_insulin(model, profile, column(trace, "delivered"), s.meals, initial_bg=s.initial_bg)
            exact &= np.array_equal(bg, column(trace, "bg_true"))
    report(7, same and exact, f"{len(names)} campaign traces byte-identical at parallelism 1 and 8: {same}; "
                              f"closure bit-exact for 2 models x 3 controllers: {exact}")


def test_criterion_8_hypoglycemia_from_cgm_add():
    hits = []
    for i, p in enumerate(cohort("uva", 20, 7)):
        s = ExperimentSpec(model="uva", profile=p, controller="openaps", initial_bg=p.g_pb / p.v_g,
                           duration=750.0, seed=i, faults=(FaultSpec("cgm", "add", 400.0, 240.0, 80.0),))
        trace = run_closed_loop(s)
        bg = column(trace, "bg_true")
        window = [r for r in trace if r.fault_active]
        euglycemic = bool(np.all((bg[:80] >= 70) & (bg[:80] <= 180)))
        high = sum(r.rationale == "high_temp" for r in window)
        if euglycemic and bg.min() < 70 and high > 0:
            hits.append(f"#{i} min bg_true {bg.min():.1f}, {high}/{len(window)} high_temp steps in window")
    report(8, bool(hits), f"{len(hits)}/20 uva patients: " + "; ".join(hits))
