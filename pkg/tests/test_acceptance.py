"""
Acceptance suite: one test and one PASS/FAIL line per criterion.

Run ``pytest tests/test_acceptance.py -v``; the lines are repeated in the
"acceptance criteria" section at the end of the session.
"""
import json

import numpy as np
import pytest

from dcgeom.design import step_rotation_angle
from dcgeom.frenet import (
    block_decompose,
    block_reconstruct,
    curvatures_numeric,
    frames_from_curve,
    ising_curvatures,
    recursion_curvatures,
)
from dcgeom.hamiltonians import ControlHamiltonian
from dcgeom.operators import pauli
from dcgeom.propagation import TimeGrid, error_curve, propagate, scaling_exponent
from dcgeom.pulses import Constant, Sinusoid, SmoothPulse
from conftest import REFERENCE_DESIGN_CONFIG, report, run_cli
from oracles import step_angle_quadrature

# smooth, strictly positive drive with a slope of both signs
TEST_PULSE = Sinusoid(1.4, 0.6, 1.3, 0.2)
DURATION = 6.0


def traced(model, shape, duration, product=0.02):
    H = model.hamiltonian(shape)
    grid = TimeGrid.resolving(H, duration, product)
    return error_curve(propagate(H, grid), model.noise_operator(), model.basis())


def inner(mask, k=5):
    mask = mask.copy()
    mask[:k] = mask[-k:] = False
    return mask


def test_criterion_1_unit_speed(model, designed_pulse):
    worst, worst_product = 0.0, 0.0
    for shape, T in ((TEST_PULSE, DURATION), (designed_pulse, designed_pulse.duration)):
        curve = traced(model, shape, T)
        om = np.abs(shape(curve.times))
        worst_product = max(worst_product, curve.grid.h * max(om.max(), model.E1, model.E2))
        worst = max(worst, float(np.max(np.abs(curve.speed() - 1))))
    ok = worst < 1e-5 and worst_product <= 0.02
    assert report(1, ok, f"max | |dG/dt| - 1 | = {worst:.2e} (< 1e-5), h*max(|omega|,E) = {worst_product:.4f}")


def test_criterion_2_kappa1_law(model, designed_pulse):
    worst = 0.0
    for shape, T in ((TEST_PULSE, DURATION), (designed_pulse, designed_pulse.duration)):
        curve = traced(model, shape, T)
        prof = curvatures_numeric(frames_from_curve(curve), curve)
        target = 2 * np.abs(shape(curve.times))
        m = inner(prof.valid & (target > 0.05))
        worst = max(worst, float(np.max(np.abs(prof.kappas[m, 0] - target[m]) / target[m])))
    assert report(2, worst < 1e-3, f"max relative gap to 2|omega| = {worst:.2e} (< 1e-3)")


def test_criterion_3_five_curvatures(model):
    curve = traced(model, TEST_PULSE, DURATION)
    prof = curvatures_numeric(frames_from_curve(curve), curve)
    om, dom = TEST_PULSE.eval(curve.times)
    ana = ising_curvatures(model.E1, model.E2, om, dom)
    m = inner(prof.valid & np.all(np.abs(ana) > 0.05, axis=1))
    gap = np.abs(prof.kappas[m] - ana[m]) / np.abs(ana[m])
    signs = np.sign(prof.kappas[m, 4]) == np.sign(dom[m])
    both = (dom[m] > 0).any() and (dom[m] < 0).any()
    ok = gap.max() < 1e-2 and signs.all() and both and m.sum() > 100
    assert report(3, ok, f"max relative gap {gap.max():.2e} (< 1e-2) over {m.sum()} samples, "
                         f"kappa5 sign follows domega/dt: {bool(signs.all())}")


def test_criterion_4_recursion():
    H = ControlHamiltonian([(Sinusoid(0.9, 0.5, 1.4, 0.0), pauli("X")),
                            (Sinusoid(0.3, 0.6, 0.8, 1.0), pauli("Y"))])
    grid = TimeGrid.resolving(H, 6.0, 0.01)
    curve = error_curve(propagate(H, grid), pauli("Z"))
    prof = curvatures_numeric(frames_from_curve(curve), curve)
    rec = recursion_curvatures(H, pauli("Z"), 2, curve.times, curve.basis)
    m = inner(prof.valid)
    gap = float(np.max(np.abs(rec.kappas[m] - prof.kappas[m]) / np.abs(rec.kappas[m])))
    pattern = rec.state.pattern_error()
    ok = gap < 1e-3 and pattern < 1e-10
    assert report(4, ok, f"recursion vs numeric gap {gap:.2e} (< 1e-3), "
                         f"commute/anticommute pattern error {pattern:.1e} (< 1e-10)")


def test_criterion_5_block_decomposition(model):
    curve = traced(model, TEST_PULSE, DURATION)
    a, b = block_decompose(curve)
    recon = float(np.max(np.abs(block_reconstruct(a, b, curve.basis) - curve.points)))
    pa = curvatures_numeric(frames_from_curve(a), a)
    pb = curvatures_numeric(frames_from_curve(b), b)
    m = inner(pa.valid & pb.valid)
    kgap = float(np.max(np.abs(pa.kappas[m, 0] - pb.kappas[m, 0])))
    t1, t2 = np.abs(pa.kappas[m, 1]), np.abs(pb.kappas[m, 1])
    sd = max(t1.std(), t2.std())
    means_ok = abs(t1.mean() - 2 * model.E1) < 1e-4 and abs(t2.mean() - 2 * model.E2) < 1e-4
    ok = kgap < 1e-6 and sd < 1e-4 and means_ok and recon < 1e-8
    assert report(5, ok, f"curvature gap {kgap:.1e} (< 1e-6), torsions {t1.mean():.6f}/{t2.mean():.6f} "
                         f"(2E1/2E2) sd {sd:.1e} (< 1e-4), reconstruction {recon:.1e} (< 1e-8)")


def test_criterion_6_step_rotation():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(500):
        w1, w2 = rng.uniform(-5, 5, 2)
        E1, E2 = rng.uniform(0.05, 3, 2)
        worst = max(worst, abs(step_rotation_angle(w1, w2, E1, E2) - step_angle_quadrature(w1, w2, E1, E2)))
    assert report(6, worst < 1e-10, f"closed form vs adaptive quadrature, 500 draws: max gap {worst:.1e} (< 1e-10)")


def test_criterion_7_design(design_run):
    code, man, out = design_run
    m = man["metrics"]
    ok = (code == 0 and m["gate"] == "Z1" and m["gate_distance"] < 1e-6
          and m["closure_residual"] < 1e-6 and m["full_closure_over_T"] < 1e-6)
    assert report(7, ok, f"exit {code}, gate {m.get('gate')} at distance {m.get('gate_distance', np.nan):.1e}, "
                         f"symmetric residual {m.get('closure_residual', np.nan):.1e}, "
                         f"|G(T)|/T {m.get('full_closure_over_T', np.nan):.1e} (< 1e-6)")


def test_criterion_8_scaling(model, design_run):
    _, _, out = design_run
    pulse = SmoothPulse.from_dict(json.loads((out / "pulse.json").read_text()))
    eps = np.logspace(-4, -2, 9)
    H = model.hamiltonian(pulse)
    closed = scaling_exponent(H, model.noise_operator(), eps, TimeGrid.resolving(H, pulse.duration)).slope
    Hc = model.hamiltonian(Constant(1.2))
    naive = scaling_exponent(Hc, model.noise_operator(), eps, TimeGrid.resolving(Hc, 5.0)).slope
    ok = 1.9 <= closed <= 2.1 and 0.9 <= naive <= 1.1
    assert report(8, ok, f"designed slope {closed:.4f} (in [1.9, 2.1]), constant-drive slope {naive:.4f} (in [0.9, 1.1])")


def test_criterion_9_determinism(design_run, tmp_path):
    _, first, _ = design_run
    code, second, _ = run_cli(tmp_path, "design", REFERENCE_DESIGN_CONFIG)
    keys = ("closure_residual", "full_closure", "full_closure_over_T", "gate", "gate_distance",
            "gate_phase", "scaling_slope", "start_index")
    same_headline = all(first["metrics"][k] == second["metrics"][k] for k in keys)
    same_all = first["metrics"] == second["metrics"] and first["config_sha256"] == second["config_sha256"]
    ok = code == 0 and same_headline and same_all
    assert report(9, ok, f"rerun identical: headline {same_headline}, every metric {same_all}")
