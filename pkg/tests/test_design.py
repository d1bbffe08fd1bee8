import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from dcgeom.design import (
    ConvergenceError,
    DesignProblem,
    OptimizerSettings,
    SmoothAnsatz,
    SquareAnsatz,
    block_exponential,
    closure_terms,
    design,
    extract_gate,
    initial_points,
    rotate_last_plane,
    soundness_constant,
    square_frame_track,
    square_propagators,
    step_rotation_angle,
    symmetric_closure_residual,
    verify_design,
)
from dcgeom.frenet import frames_from_curve
from dcgeom.hamiltonians import IsingModel
from dcgeom.operators import pauli
from dcgeom.propagation import TimeGrid, error_curve, propagate
from dcgeom.pulses import SmoothPulse, SquarePulseSequence
from conftest import DESIGNED_X
from oracles import pauli_matrix, step_angle_quadrature

# closed three-segment square design (E1 = 0.5, E2 = 1, n = 3, seed 0)
SQUARE_X = np.array([-0.20282272795435996, 2.136910584874648, 0.6253441138502815,
                     2.1576965248122377, 1.7024907388945145, 3.9969940714943792])

energies = st.floats(0.1, 3.0)
amps = st.floats(-5.0, 5.0)


def smooth_problem(model, **kw):
    return DesignProblem(model, SmoothAnsatz(), **kw)


# --- step rotation --------------------------------------------------------


def test_step_rotation_examples():
    assert step_rotation_angle(0.0, 1.0, 1.0, 1.0) == pytest.approx(math.pi / 4, abs=1e-15)
    assert step_rotation_angle(0.7, 0.7, 0.5, 1.0) == 0
    s = math.sqrt((0.25 + 1) / 2) / 0.5
    assert step_rotation_angle(-1.3, 1.3, 0.5, 1.0) == pytest.approx(2 * math.atan(1.3 * s))
    with pytest.raises(ValueError):
        step_rotation_angle(0.0, 1.0, 0.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(w1=amps, w2=amps, E1=energies, E2=energies)
def test_step_rotation_matches_quadrature(w1, w2, E1, E2):
    assert abs(step_rotation_angle(w1, w2, E1, E2) - step_angle_quadrature(w1, w2, E1, E2)) < 1e-10


def test_rotate_last_plane():
    E = np.eye(4)
    R = rotate_last_plane(E, 0.3)
    assert np.allclose(R[:2], E[:2])
    assert np.allclose(R[2], [0, 0, math.cos(0.3), math.sin(0.3)])
    assert np.allclose(R @ R.T, np.eye(4))


# --- square pulses --------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(om=amps, E=energies, dt=st.floats(0.01, 5.0))
def test_block_exponential_closed_form(om, E, dt):
    ref = expm(-1j * dt * (om * pauli_matrix("X") + E * pauli_matrix("Z")))
    assert np.max(np.abs(block_exponential(om, E, dt) - ref)) < 1e-12


def test_square_propagators_match_generic_integrator(model):
    pulse = SquarePulseSequence(SQUARE_X[::2], SQUARE_X[1::2], 3)
    times, R = square_propagators(model, pulse)
    traj = propagate(model.hamiltonian(pulse), TimeGrid(pulse.duration, 900))
    for t, U in zip(times, R):
        k = int(np.argmin(np.abs(traj.times - t)))
        if abs(traj.times[k] - t) < 1e-12:
            assert np.max(np.abs(traj.unitaries[k] - U)) < 1e-10
    assert np.max(np.abs(traj.final - R[-1])) < 1e-10
    # and against plain products of dense exponentials in time order
    U = np.eye(4, dtype=complex)
    for om, dt in zip(np.tile(pulse.amplitudes, 3), np.tile(pulse.durations, 3)):
        H = om * pauli_matrix("IX") + 0.75 * pauli_matrix("IZ") - 0.25 * pauli_matrix("ZZ")
        U = expm(-1j * dt * H) @ U
    assert np.max(np.abs(U - R[-1])) < 1e-10


def test_square_frame_jumps(model):
    pulse = SquarePulseSequence([0.6, 1.8, -0.9, 0.4], [1.0, 0.7, 1.2, 0.9], 2)
    jumps = square_frame_track(model, pulse)
    assert len(jumps) == 7
    cont = [j for j in jumps if j.continuous]
    assert len(cont) == 3
    for j in cont:
        assert j.mismatch < 1e-10
        # only the last two vectors move
        assert np.allclose(j.before[:4], j.after[:4], atol=1e-10)
        assert j.oriented_phi == pytest.approx(math.copysign(1, j.omega_before) * j.phi)
    for j in jumps:
        if not j.continuous:
            assert math.isnan(j.mismatch) and math.isnan(j.oriented_phi)


def test_negative_drive_step_turns_the_other_way(model):
    pulse = SquarePulseSequence([-0.6, -1.8], [1.0, 0.7], 1)
    (j,) = square_frame_track(model, pulse)
    assert j.phi < 0 < j.oriented_phi
    assert j.mismatch < 1e-10


# --- ansatz and problem ---------------------------------------------------


def test_smooth_ansatz():
    a = SmoothAnsatz()
    assert a.names == ("c0", "c1", "a1", "phi1", "c2", "a2", "phi2", "t_p")
    p = a.build(DESIGNED_X, 3)
    assert isinstance(p, SmoothPulse) and p.n_sym == 3
    assert np.allclose(a.params(p), DESIGNED_X)
    b = SmoothAnsatz.with_bounds(3, {"t_p": [4.0, 5.0]})
    assert len(b.names) == 11 and tuple(b.bounds_dict()["t_p"]) == (4.0, 5.0)
    with pytest.raises(ValueError):
        SmoothAnsatz.with_bounds(2, {"zz": [0, 1]})
    with pytest.raises(ValueError):
        SmoothAnsatz.with_bounds(2, {"a1": [2, 1]})


def test_square_ansatz():
    a = SquareAnsatz.with_bounds(3, {"omega": [-1, 1], "dt2": [0.5, 0.5]})
    assert a.names == ("omega1", "dt1", "omega2", "dt2", "omega3", "dt3")
    assert tuple(a.bounds_dict()["omega3"]) == (-1.0, 1.0)
    assert not a.free[a.names.index("dt2")]
    p = a.build(SQUARE_X, 2)
    assert p.duration == pytest.approx(2 * SQUARE_X[1::2].sum())


def test_problem_validation(model):
    p = DesignProblem(model)
    assert p.target_angle == pytest.approx(2 * math.pi / 3)
    assert DesignProblem(model, n_sym=3, k=2).target_angle == pytest.approx(2 * math.pi / 3)
    assert DesignProblem(model, n_sym=1, k=1).target_angle == 0
    with pytest.raises(ValueError):
        DesignProblem(model, n_sym=4, k=2)
    with pytest.raises(ValueError):
        DesignProblem(model, target_gate="CNOT")
    with pytest.raises(ValueError):
        OptimizerSettings(tolerance=0)


def test_soundness_constant():
    assert soundness_constant(2 * math.pi / 3) == pytest.approx(math.sqrt(2))
    assert soundness_constant(0.0) == pytest.approx(math.sqrt(2))
    assert soundness_constant(2 * math.pi / 5) == pytest.approx(
        math.sqrt(2) / (2 * math.sin(math.pi / 10)))


# --- closure residual -----------------------------------------------------


def test_designed_residual_and_refinement(model):
    p = smooth_problem(model)
    diag = symmetric_closure_residual(DESIGNED_X, p)
    assert diag.residual < 1e-6
    assert diag.gate_distance < 1e-6
    assert np.allclose(sorted(diag.plane_angles)[-2:], 2 * math.pi / 3, atol=1e-6)
    fine = symmetric_closure_residual(DESIGNED_X, p, max_product=0.01)
    assert fine.residual < 1e-6
    assert np.linalg.norm(diag.repeated_endpoint(3)) < 1e-8


def test_square_design_residual(model):
    p = DesignProblem(model, SquareAnsatz.with_bounds(3))
    assert symmetric_closure_residual(SQUARE_X, p).residual < 1e-10


def test_single_period_residual_is_closure_plus_periodicity(model):
    x = DESIGNED_X.copy()
    p = DesignProblem(model, n_sym=1, k=1, target_gate=None)
    diag = symmetric_closure_residual(x, p)
    pulse = p.ansatz.build(x, 1)
    H = model.hamiltonian(pulse)
    curve = error_curve(propagate(H, TimeGrid.resolving(H, pulse.duration, 0.02)),
                        model.noise_operator(), p.basis)
    assert diag.rotating_dim == 0
    assert diag.displacement_term == pytest.approx(np.linalg.norm(curve.endpoint) / pulse.t_p, rel=1e-8)
    assert diag.residual == pytest.approx(math.hypot(diag.frame_term, diag.displacement_term))


def test_constant_segment_does_not_close(model):
    p = smooth_problem(model)
    const = SmoothPulse(1.2, [0.0, 0.0], [1.0, 1.0], [0.0, 0.0], 4.0)
    assert symmetric_closure_residual(const, p).residual > 0.1


def test_closure_terms_on_exact_rotation():
    c, s = math.cos(2 * math.pi / 3), math.sin(2 * math.pi / 3)
    O = np.eye(4)
    O[:2, :2] = [[c, -s], [s, c]]
    frame, disp, angles, rdim = closure_terms(O, np.array([1.0, 2.0, 0.0, 0.0]), 2.0, 2 * math.pi / 3)
    assert frame < 1e-12 and disp == 0 and rdim == 2
    frame, disp, _, _ = closure_terms(O, np.array([0.0, 0.0, 3.0, 0.0]), 2.0, 2 * math.pi / 3)
    assert disp == pytest.approx(1.5)


def test_residual_soundness_on_random_draws(model):
    p = DesignProblem(model, SmoothAnsatz(), optimizer=OptimizerSettings(n_starts=12, seed=5))
    C = soundness_constant(p.target_angle)
    for x in initial_points(p):
        diag = symmetric_closure_residual(x, p)
        pulse = p.ansatz.build(x, p.n_sym)
        H = model.hamiltonian(pulse)
        curve = error_curve(propagate(H, TimeGrid.resolving(H, pulse.duration, 0.02)),
                            model.noise_operator(), p.basis)
        assert np.linalg.norm(curve.endpoint) <= C * pulse.duration * diag.residual + 1e-9
        assert np.allclose(diag.repeated_endpoint(3), curve.endpoint, atol=1e-6)


# --- gate extraction ------------------------------------------------------


def test_extract_gate_examples():
    z1 = pauli("ZI")
    c = extract_gate(np.exp(0.4j) * z1)
    assert c.label == "Z1" and c.distance < 1e-15 and c.conclusive
    assert c.phase == pytest.approx(0.4)
    c = extract_gate(np.eye(4))
    assert c.label == "I" and c.distance < 1e-15
    blocks = np.diag([1, 1, -1, -1]).astype(complex)
    assert extract_gate(blocks).label == "Z1"
    c = extract_gate(expm(-0.3j * pauli("IX")))
    assert not c.conclusive
    assert extract_gate(z1, targets=["ZZ", "IZ"]).distance == pytest.approx(math.sqrt(2))


@settings(max_examples=30, deadline=None)
@given(alpha=st.floats(-math.pi, math.pi), label=st.sampled_from(["II", "ZI", "IZ", "ZZ"]))
def test_extract_gate_phase_invariance(alpha, label):
    M = pauli(label)
    R = expm(-0.01j * pauli("IX")) @ M
    assert extract_gate(np.exp(1j * alpha) * R).label == extract_gate(R).label


# --- search ---------------------------------------------------------------


@pytest.mark.slow
def test_square_design_is_deterministic_and_batch_independent(model):
    p = DesignProblem(model, SquareAnsatz.with_bounds(3), epsilons=(1e-4, 1e-3, 1e-2))
    a = design(p)
    b = design(p, batch_size=2)
    assert a.headline() == b.headline()
    assert np.array_equal(a.params, b.params)
    assert a.classification.label == "Z1"
    assert a.closure_residual < 1e-6
    assert 1.9 <= a.verification.slope <= 2.1
    assert a.recompute_residual() == pytest.approx(a.closure_residual, abs=1e-10)


def test_infeasible_bounds_fail(model):
    ansatz = SquareAnsatz.with_bounds(3, {"omega": [1.0, 1.0001]})
    p = DesignProblem(model, ansatz, optimizer=OptimizerSettings(n_starts=2, max_iter=60,
                                                                 restarts=0, polish_evals=20))
    with pytest.raises(ConvergenceError) as info:
        design(p)
    err = info.value
    assert err.best.residual > 1e-3 and len(err.starts) == 2
    assert not any(s.accepted for s in err.starts)


def test_verify_design_reference(model):
    p = smooth_problem(model, epsilons=(1e-4, 1e-3, 1e-2))
    r = verify_design(p, DESIGNED_X)
    assert r.classification.label == "Z1" and r.classification.conclusive
    assert r.full_closure < 1e-5 * r.duration
    assert 1.9 <= r.verification.slope <= 2.1
    h = r.headline()
    assert h["gate"] == "Z1" and h["start_index"] == -1
    frames = frames_from_curve(error_curve(
        propagate(model.hamiltonian(r.pulse), TimeGrid.resolving(model.hamiltonian(r.pulse), r.duration)),
        model.noise_operator(), p.basis))
    assert frames.orthonormality_error() < 1e-8
