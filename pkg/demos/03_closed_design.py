"""
Checking a closed smooth pulse.

A pulse whose error curve closes cancels the noise to first order. The
parameters below were found by a multi-start search for E1 = 0.5, E2 = 1
(three repetitions of one Lorentzian-sum period, target gate Z on the first
qubit); the search itself is what ``dcgeom design`` runs. Pass ``--search``
to rerun it here (about a minute and a half).

    python3 demos/03_closed_design.py [--search]
"""
import sys

import numpy as np

from dcgeom.design import DesignProblem, OptimizerSettings, SmoothAnsatz, design, verify_design
from dcgeom.hamiltonians import IsingModel
from dcgeom.propagation import TimeGrid, error_curve, propagate, scaling_exponent
from dcgeom.pulses import Constant

model = IsingModel(E1=0.5, E2=1.0)
problem = DesignProblem(model, SmoothAnsatz(), n_sym=3, k=1, target_gate="Z1",
                        optimizer=OptimizerSettings(seed=0), epsilons=tuple(np.logspace(-4, -2, 9)))

if "--search" in sys.argv:
    result = design(problem)
    print(f"search accepted start {result.start.index}")
else:
    x = [2.1755559169443868, 1.9965300773789596, 4.316280457089329, 0.47542422725017225,
         -3.3723906878581555, 1.3519437741351434, 0.7388519319700246, 7.435492277358116]
    result = verify_design(problem, x)

for name, value in zip(problem.ansatz.names, result.params):
    print(f"  {name:5s} = {value: .6f}")
print(f"total duration {result.pulse.duration:.4f}")

c = result.closure
print(f"\none period: last-plane angles {np.round(np.sort(c.plane_angles), 6)}, "
      f"target {c.target_angle:.6f}")
print(f"symmetric closure residual {c.residual:.1e}")
print(f"|G(T)| over the full pulse {result.full_closure:.1e}")
print(f"gate {result.classification.label} (distance {result.classification.distance:.1e})")

# compare the noise scaling with a constant drive of similar strength
print(f"\ndesigned pulse: infidelity ~ eps^{result.verification.slope:.3f}")
for eps, inf in zip(result.verification.epsilons[::2], result.verification.infidelities[::2]):
    print(f"  eps = {eps:.1e}   infidelity = {inf:.2e}")
Hc = model.hamiltonian(Constant(1.2))
naive = scaling_exponent(Hc, model.noise_operator(), problem.epsilons, TimeGrid.resolving(Hc, 5.0))
print(f"constant drive: infidelity ~ eps^{naive.slope:.3f}")

# the curve returns to the origin after the third repetition
H = model.hamiltonian(result.pulse)
curve = error_curve(propagate(H, TimeGrid.resolving(H, result.pulse.duration)), model.noise_operator())
third = len(curve.times) // 3
print(f"\n|G| after one period {np.linalg.norm(curve.points[third]):.3f}, "
      f"two {np.linalg.norm(curve.points[2 * third]):.3f}, three {np.linalg.norm(curve.points[-1]):.1e}")
