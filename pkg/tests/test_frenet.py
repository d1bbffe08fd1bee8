import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import special_ortho_group

from dcgeom._numerics import differentiate
from dcgeom.frenet import (
    DegenerateFrameError,
    block_decompose,
    block_reconstruct,
    closure_residual,
    curvatures_numeric,
    derivative_operators,
    frame_at,
    frames_from_curve,
    ising_curvatures,
    recursion_curvatures,
)
from dcgeom.hamiltonians import ControlHamiltonian, IsingModel
from dcgeom.operators import pauli
from dcgeom.propagation import TimeGrid, error_curve, propagate
from dcgeom.pulses import Constant, PulseShape, Sinusoid
from oracles import circle_point

TEST_PULSE = Sinusoid(1.4, 0.6, 1.3, 0.2)     # positive, smooth, nonzero slope


def curve_for(H, Q, t_end, product=0.02, basis=None):
    grid = TimeGrid.resolving(H, t_end, product)
    return error_curve(propagate(H, grid), Q, basis)


def interior(x, k=10):
    return x[k:-k]


# --- derivative expansion -------------------------------------------------


def test_derivative_operator_examples():
    om = Sinusoid(0.7, 0.4, 2.0, 0.1)
    H = ControlHamiltonian([(om, pauli("X"))])
    ops = derivative_operators(H, pauli("Z"), 3)
    t = np.array([0.0, 0.4, 1.3])
    w, dw = om.eval(t)
    assert np.allclose(ops[0](t), pauli("Z"))
    assert np.allclose(ops[1](t), 2 * w[:, None, None] * pauli("Y"))
    expected = -4 * (w * w)[:, None, None] * pauli("Z") + 2 * dw[:, None, None] * pauli("Y")
    assert np.allclose(ops[2](t), expected)


def test_derivative_operators_match_curve_differences(model):
    H = model.hamiltonian(TEST_PULSE)
    curve = curve_for(H, model.noise_operator(), 4.0, 0.005)
    ops = derivative_operators(H, model.noise_operator(), 4, curve.basis)
    O = curve.basis.conjugation_matrix(curve.trajectory.unitaries)
    h = curve.grid.h
    for n, op in enumerate(ops, start=1):
        exact = np.einsum("kab,kb->ka", O, op.coords(curve.times))
        fd = differentiate(curve.points, h, order=n, accuracy=6)
        scale = np.max(np.abs(exact))
        assert np.max(np.abs(interior(fd - exact, 20))) < 1e-4 * scale


def test_derivative_operator_errors(model):
    H = model.hamiltonian(TEST_PULSE)
    with pytest.raises(ValueError):
        derivative_operators(H, model.noise_operator(), 7)

    class Rough(PulseShape):
        def derivatives(self, t, order):
            if order > 0:
                raise NotImplementedError
            return np.ones((1,) + np.shape(t))

    ops = derivative_operators(model.hamiltonian(Rough()), model.noise_operator(), 3)
    with pytest.raises(ValueError, match="differentiable"):
        ops[2].coords([0.5])


# --- frames and numeric curvatures ----------------------------------------


def test_circle_frames_and_curvature():
    om = 0.9
    H = ControlHamiltonian([(Constant(om), pauli("X"))])
    curve = curve_for(H, pauli("Z"), np.pi / om)
    frames = frames_from_curve(curve)
    assert frames.orthonormality_error() < 1e-8
    # tangent of the analytic circle, (g_Z, g_Y)' = (cos 2wt, sin 2wt)
    t = curve.times
    tangent = np.stack([np.cos(2 * om * t), np.sin(2 * om * t)], axis=1)
    assert np.allclose(frames.vectors[:, 0], tangent, atol=1e-10)
    prof = curvatures_numeric(frames, curve)
    assert prof.n == 1
    assert np.allclose(interior(prof.kappas[:, 0]), 2 * om, rtol=1e-6)
    assert closure_residual(curve) < 1e-12
    assert np.allclose(curve.points, circle_point(om, t), atol=1e-12)


def test_half_circle_distance():
    om = 0.9
    H = ControlHamiltonian([(Constant(om), pauli("X"))])
    curve = curve_for(H, pauli("Z"), np.pi / (2 * om))
    assert closure_residual(curve) == pytest.approx(1 / om, rel=1e-10)


def test_helix_curvatures():
    om, E = 1.1, 0.6
    H = ControlHamiltonian([(Constant(om), pauli("X")), (E, pauli("Z"))])
    curve = curve_for(H, pauli("Z"), 6.0)
    prof = curvatures_numeric(frames_from_curve(curve), curve)
    assert curve.d == 3
    k = interior(prof.kappas)
    assert np.allclose(k[:, 0], 2 * om, rtol=1e-6)
    assert np.allclose(np.abs(k[:, 1]), 2 * E, rtol=1e-6)


def test_ising_frames(model):
    H = model.hamiltonian(TEST_PULSE)
    curve = curve_for(H, model.noise_operator(), 5.0)
    frames = frames_from_curve(curve)
    assert frames.d == 6 and frames.effective_dim == 6
    assert frames.orthonormality_error() < 1e-8
    q = np.zeros(6)
    q[curve.basis.index("IZ")] = 1.0
    assert np.allclose(frames.vectors[0, 0], q)
    assert np.allclose(frames.vectors[:, 0], curve.tangents(), atol=1e-10)


def test_frame_at_matches_sampled_frames(model):
    H = model.hamiltonian(TEST_PULSE)
    curve = curve_for(H, model.noise_operator(), 3.0)
    frames = frames_from_curve(curve)
    k = len(curve.times) // 2
    E = frame_at(H, model.noise_operator(), curve.basis, curve.times[k], curve.trajectory.unitaries[k])
    assert np.allclose(E, frames.at(k), atol=1e-10)


def test_ising_analytic_against_numeric(model):
    H = model.hamiltonian(TEST_PULSE)
    curve = curve_for(H, model.noise_operator(), 6.0)
    prof = curvatures_numeric(frames_from_curve(curve), curve)
    om, dom = TEST_PULSE.eval(curve.times)
    ana = ising_curvatures(model.E1, model.E2, om, dom)
    mask = prof.valid & np.all(np.abs(ana) > 0.05, axis=1)
    mask[:5] = mask[-5:] = False
    assert mask.sum() > 0.5 * len(mask)
    rel = np.abs(prof.kappas[mask] - ana[mask]) / np.abs(ana[mask])
    assert rel.max() < 1e-2
    # kappa_5 follows the sign of the slope
    assert np.all(np.sign(prof.kappas[mask, 4]) == np.sign(dom[mask]))


def test_fd_route_agrees_with_operator_route(model):
    H = model.hamiltonian(TEST_PULSE)
    curve = curve_for(H, model.noise_operator(), 4.0, 0.01)
    a = curvatures_numeric(frames_from_curve(curve, "operator"), curve)
    b = curvatures_numeric(frames_from_curve(curve, "fd"), curve)
    m = a.valid & b.valid
    m[:30] = m[-30:] = False
    assert np.allclose(a.kappas[m, :3], b.kappas[m, :3], rtol=1e-3)


def test_curvature_frame_independence(model):
    H = model.hamiltonian(TEST_PULSE)
    base = model.basis()
    M = special_ortho_group.rvs(6, random_state=np.random.default_rng(3))
    a = curve_for(H, model.noise_operator(), 4.0)
    b = curve_for(H, model.noise_operator(), 4.0, basis=base.rotated(M))
    ka = curvatures_numeric(frames_from_curve(a), a).kappas
    kb = curvatures_numeric(frames_from_curve(b), b).kappas
    m = np.isfinite(ka).all(axis=1)
    assert np.max(np.abs(ka[m] - kb[m])) < 1e-10


def test_undriven_ising_is_a_straight_line(model):
    # noise commutes with the undriven Hamiltonian: G(t) = t * Q, so kappa_1 = 0
    curve = curve_for(model.hamiltonian(Constant(0.0)), model.noise_operator(), 2.0)
    frames = frames_from_curve(curve)
    prof = curvatures_numeric(frames, curve)
    assert frames.effective_dim == 1
    assert np.all(prof.kappas == 0)
    with pytest.raises(DegenerateFrameError) as info:
        frame_at(model.hamiltonian(Constant(0.0)), model.noise_operator(), model.basis(), 0.7)
    assert info.value.time == 0.7


def test_constant_drive_collapses_last_curvature(model):
    curve = curve_for(model.hamiltonian(Constant(1.2)), model.noise_operator(), 4.0)
    frames = frames_from_curve(curve)
    prof = curvatures_numeric(frames, curve)
    assert frames.effective_dim == 5
    assert np.all(prof.kappas[:, 4] == 0)
    ana = ising_curvatures(model.E1, model.E2, 1.2, 0.0)
    assert np.allclose(interior(prof.kappas[:, :4]), ana[:4], rtol=1e-6)


def test_equal_energies_collapse_to_three_dimensions():
    m = IsingModel(0.7, 0.7)
    curve = curve_for(m.hamiltonian(TEST_PULSE), m.noise_operator(), 5.0, basis=IsingModel(0.5, 1.0).basis())
    frames = frames_from_curve(curve)
    prof = curvatures_numeric(frames, curve)
    assert frames.effective_dim == 3
    assert np.all(prof.kappas[prof.valid, 2:] == 0)
    om, dom = TEST_PULSE.eval(curve.times)
    ana = ising_curvatures(0.7, 0.7, om, dom)
    assert np.allclose(ana[:, 2], 0)
    assert np.allclose(interior(prof.kappas[:, :2]), interior(ana[:, :2]), rtol=1e-5)


# --- closed forms ----------------------------------------------------------


def test_ising_curvature_values():
    k = ising_curvatures(0.5, 1.0, 1.0, 0.0)
    assert k == pytest.approx([2.0, 1.5811, 0.9487, 2.3664, 0.0], abs=1e-4)
    assert k[1] == pytest.approx(np.sqrt(2.5)) and k[3] == pytest.approx(2 * np.sqrt(1.4))
    assert ising_curvatures(0.8, 0.8, 1.3, 0.4)[2] == 0
    assert ising_curvatures(0.5, 1.0, 0.0, 0.3)[0] == 0
    with pytest.raises(ValueError):
        ising_curvatures(0.0, 0.0, 1.0, 0.0)


@settings(max_examples=30, deadline=None)
@given(om=st.floats(-3, 3), dom=st.floats(-3, 3))
def test_ising_kappa5_sign_follows_slope(om, dom):
    k5 = ising_curvatures(0.5, 1.0, om, dom)[4]
    assert np.sign(k5) == np.sign(dom)


# --- recursion ------------------------------------------------------------


def xy_hamiltonian():
    return ControlHamiltonian([(Sinusoid(0.9, 0.5, 1.4, 0.0), pauli("X")),
                               (Sinusoid(0.3, 0.6, 0.8, 1.0), pauli("Y"))])


def test_recursion_against_numeric():
    H = xy_hamiltonian()
    curve = curve_for(H, pauli("Z"), 6.0, 0.01)
    prof = curvatures_numeric(frames_from_curve(curve), curve)
    rec = recursion_curvatures(H, pauli("Z"), 2, curve.times, curve.basis)
    wx, wy = H.coefficient_values(curve.times)[:, 0]
    assert np.allclose(rec.kappas[:, 0], 2 * np.hypot(wx, wy), rtol=1e-12)
    m = prof.valid.copy()
    m[:5] = m[-5:] = False
    rel = np.abs(rec.kappas[m] - prof.kappas[m]) / np.abs(rec.kappas[m])
    assert rel.max() < 1e-3
    assert rec.state.pattern_error() < 1e-10
    assert rec.state.norm_error() < 1e-10
    assert np.allclose(rec.state.ops[0], np.eye(2))


def test_recursion_single_axis():
    H = ControlHamiltonian([(Sinusoid(0.9, 0.5, 1.4, 0.0), pauli("X"))])
    t = np.linspace(0, 3, 31)
    rec = recursion_curvatures(H, pauli("Z"), 1, t)
    assert np.allclose(rec.kappas[:, 0], 2 * np.abs(H.coefficient_values(t)[0, 0]))


def test_recursion_requires_anticommutation(model):
    with pytest.raises(ValueError, match="anticommuting"):
        recursion_curvatures(model.hamiltonian(TEST_PULSE), model.noise_operator(), 3, [0.0, 1.0])
    with pytest.raises(ValueError):
        recursion_curvatures(xy_hamiltonian(), 0.5 * pauli("Z"), 2, [0.0])


# --- block decomposition --------------------------------------------------


def test_block_decomposition(model):
    H = model.hamiltonian(TEST_PULSE)
    curve = curve_for(H, model.noise_operator(), 6.0)
    a, b = block_decompose(curve)
    recon = block_reconstruct(a, b, curve.basis)
    assert np.max(np.abs(recon - curve.points)) < 1e-8
    ka = curvatures_numeric(frames_from_curve(a), a)
    kb = curvatures_numeric(frames_from_curve(b), b)
    m = ka.valid & kb.valid
    m[:5] = m[-5:] = False
    assert np.max(np.abs(ka.kappas[m, 0] - kb.kappas[m, 0])) < 1e-6
    assert np.allclose(ka.kappas[m, 0], 2 * np.abs(TEST_PULSE(curve.times[m])), rtol=1e-6)
    for prof, E in ((ka, model.E1), (kb, model.E2)):
        tors = np.abs(prof.kappas[m, 1])
        assert np.std(tors) < 1e-4
        assert np.mean(tors) == pytest.approx(2 * E, rel=1e-6)
    for c in (a, b):
        assert np.max(np.abs(c.speed() - 1)) < 1e-5
    assert closure_residual(curve) == pytest.approx(
        np.sqrt(0.5 * (closure_residual(a) ** 2 + closure_residual(b) ** 2)), rel=1e-12)


def test_block_decomposition_rejects_other_models():
    m = IsingModel(0.5, 1.0, noise="IX")
    H = ControlHamiltonian([(TEST_PULSE, pauli("IX")), (0.3, pauli("XZ"))])
    curve = curve_for(H, pauli("IZ"), 1.0)
    with pytest.raises(ValueError):
        block_decompose(curve)
    with pytest.raises(ValueError):
        curve6 = curve_for(m.hamiltonian(TEST_PULSE), pauli("IZ"), 1.0, basis=IsingModel(0.5, 1.0).basis())
        block_decompose(curve6.__class__(curve6.basis, curve6.points, curve6.grid,
                                         curve6.trajectory, pauli("ZZ")))
