"""
Command-line front end.

    dcgeom curvatures --config run.json --out outdir
    dcgeom trace      --config run.json
    dcgeom design     --config run.json --seed 7 --threads 4
    dcgeom verify     --config run.json

Every command writes UTF-8 CSV files and ``manifest.json`` into the output
directory (``--out``, else ``$DCGEOM_OUT``, else the config's ``out`` key,
else ``./out``).

Exit codes: 0 success, 1 invalid config or input, 2 the design did not
converge or its gate is inconclusive, 3 numerical degeneracy.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, build_epsilons, build_model, build_problem, build_pulse, load
from .design import (
    ConvergenceError,
    DesignResult,
    InconclusiveGateError,
    extract_gate,
    verify_design,
)
from .export import RunManifest, jsonable, write_csv, write_json
from .frenet import (
    DegenerateFrameError,
    block_decompose,
    block_reconstruct,
    closure_residual,
    curvatures_numeric,
    frames_from_curve,
    ising_curvatures,
)
from .propagation import DegenerateFitError, TimeGrid, error_curve, propagate, scaling_exponent

log = logging.getLogger("dcgeom")

EXIT_OK, EXIT_INVALID, EXIT_CONVERGENCE, EXIT_DEGENERATE = 0, 1, 2, 3
#: analytic and numeric curvatures are compared where every |kappa| exceeds this
KAPPA_FLOOR = 0.05
N_KAPPA = 5


# ---------------------------------------------------------------------------
# shared pieces


def _grid(cfg: RunConfig, H, duration: float) -> TimeGrid:
    g = cfg.section("grid")
    if "steps" in g:
        return TimeGrid(duration, g["steps"])
    return TimeGrid.resolving(H, duration, g.get("max_product", 0.02))


def _curve(cfg: RunConfig, model, spec):
    H = model.hamiltonian(spec.shape)
    grid = _grid(cfg, H, spec.duration)
    traj = propagate(H, grid)
    return H, grid, traj, error_curve(traj, model.noise_operator(), model.basis())


def curvature_table(model, shape, curve):
    """Columns, rows and comparison metrics of analytic against numeric curvatures.

    Numeric curvatures use positively oriented frames, where the last one
    equals the closed form times ``sign(omega)``; the comparison uses that
    orientation. Numeric columns past a collapsed dimension hold 0 for the
    first vanishing curvature and NaN beyond it.
    """
    t = curve.times
    omega, domega = shape.eval(t)
    analytic = ising_curvatures(model.E1, model.E2, omega, domega)
    frames = frames_from_curve(curve)
    prof = curvatures_numeric(frames, curve)
    numeric = np.full((len(t), N_KAPPA), np.nan)
    n = min(prof.n, N_KAPPA)
    numeric[:, :n] = prof.kappas[:, :n]
    if n < N_KAPPA:
        numeric[prof.valid, n] = 0.0
    oriented = analytic.copy()
    oriented[:, -1] *= np.where(omega < 0, -1.0, 1.0)
    eff = min(frames.effective_dim - 1, N_KAPPA)
    cmp = prof.valid & np.all(np.abs(analytic[:, :eff]) > KAPPA_FLOOR, axis=1)
    cmp[[0, -1]] = False
    gaps = np.abs(numeric[cmp, :eff] - oriented[cmp, :eff]) / np.abs(oriented[cmp, :eff])
    metrics = {
        "effective_dim": frames.effective_dim,
        "compared_samples": int(cmp.sum()),
        "max_relative_gap": float(gaps.max()) if gaps.size else None,
        "max_relative_gap_per_kappa": gaps.max(axis=0).tolist() if gaps.size else None,
        "kappa_floor": KAPPA_FLOOR,
        "last_kappa_convention": "positively oriented frame; closed form times sign(omega)",
    }
    cols = (["t", "omega", "domega_dt"] + [f"kappa{i}_analytic" for i in range(1, 6)]
            + [f"kappa{i}_numeric" for i in range(1, 6)] + ["valid"])
    rows = np.column_stack([t, omega, domega, analytic, numeric, prof.valid.astype(int)])
    return cols, rows, metrics


def _curve_rows(curve):
    return ["t"] + [f"G_{lab}" for lab in curve.basis.labels], np.column_stack([curve.times, curve.points])


def _sweep_rows(res):
    return (["epsilon", "infidelity", "phase_min_infidelity", "used_in_fit"],
            np.column_stack([res.epsilons, res.infidelities, res.phase_min_infidelities,
                             res.used.astype(int)]))


@contextmanager
def _mapper(threads: int):
    if threads <= 1:
        yield map
        return
    with ProcessPoolExecutor(max_workers=threads) as ex:
        yield ex.map


# ---------------------------------------------------------------------------
# commands


def cmd_curvatures(cfg: RunConfig, out: Path, man: RunManifest, threads: int = 1):
    model = build_model(cfg)
    spec = build_pulse(cfg)
    if spec.duration <= 0:
        raise ConfigError("curvatures need a pulse of positive duration")
    _, grid, _, curve = _curve(cfg, model, spec)
    cols, rows, metrics = curvature_table(model, spec.shape, curve)
    man.add(write_csv(out / "curvatures.csv", cols, rows))
    man.metrics.update(metrics, steps=grid.steps, d=curve.d)


def _projection_matrix(proj, basis):
    rows = []
    for item in proj:
        if isinstance(item, str):
            if item not in basis.labels:
                raise ConfigError(f"trace: projection label {item!r} not in basis {basis.labels}")
            v = np.zeros(basis.d)
            v[basis.index(item)] = 1.0
        else:
            v = np.asarray(item, dtype=float)
            if v.shape != (basis.d,) or not np.linalg.norm(v) > 0:
                raise ConfigError(f"trace: projection vectors need {basis.d} entries, not all zero")
            v = v / np.linalg.norm(v)
        rows.append(v)
    return np.array(rows)


def cmd_trace(cfg: RunConfig, out: Path, man: RunManifest, threads: int = 1):
    model = build_model(cfg)
    spec = build_pulse(cfg)
    basis = model.basis()
    projections = [_projection_matrix(p, basis) for p in cfg.section("trace").get("projections", [])]
    blockable = basis.d == 6 and model.noise == "IZ"
    block_cols = ["t", "g_Z", "g_Y", "g_X"]
    if spec.duration == 0:
        zero = np.zeros((1, basis.d + 1))
        man.add(write_csv(out / "curve.csv", ["t"] + [f"G_{lab}" for lab in basis.labels], zero))
        if blockable:
            for name in ("block_1.csv", "block_2.csv"):
                man.add(write_csv(out / name, block_cols, np.zeros((1, 4))))
        for i, _ in enumerate(projections, start=1):
            man.add(write_csv(out / f"projection_{i}.csv", ["t", "p1", "p2", "p3"], np.zeros((1, 4))))
        man.metrics.update(closure_residual=0.0, closure_over_T=None, d=basis.d, steps=0)
        return
    _, grid, _, curve = _curve(cfg, model, spec)
    cols, rows = _curve_rows(curve)
    man.add(write_csv(out / "curve.csv", cols, rows))
    G = closure_residual(curve)
    man.metrics.update(d=curve.d, steps=grid.steps, closure_residual=G,
                       closure_over_T=G / spec.duration,
                       max_speed_deviation=float(np.max(np.abs(curve.speed() - 1))))
    if blockable:
        ca, cb = block_decompose(curve)
        for name, c in (("block_1.csv", ca), ("block_2.csv", cb)):
            pts = c.points[:, [c.basis.index(p) for p in ("Z", "Y", "X")]]
            man.add(write_csv(out / name, block_cols, np.column_stack([c.times, pts])))
        recon = block_reconstruct(ca, cb, curve.basis)
        man.metrics.update(
            block_speed_deviation=[float(np.max(np.abs(c.speed() - 1))) for c in (ca, cb)],
            block_reconstruction_error=float(np.max(np.abs(recon - curve.points))),
        )
    for i, P in enumerate(projections, start=1):
        man.add(write_csv(out / f"projection_{i}.csv", ["t", "p1", "p2", "p3"],
                          np.column_stack([curve.times, curve.points @ P.T])))


def _pulse_dict(pulse) -> dict:
    d = pulse.to_dict()
    d["kind"] = "smooth" if hasattr(pulse, "c0") else "square"
    return d


def _write_design(result: DesignResult, out: Path, man: RunManifest, map_fn):
    p = result.problem
    man.add(write_json(out / "pulse.json", _pulse_dict(result.pulse)))
    H = p.model.hamiltonian(result.pulse)
    grid = TimeGrid.resolving(H, result.duration, p.max_product)
    traj = propagate(H, grid)
    curve = error_curve(traj, p.model.noise_operator(), p.basis)
    man.add(write_csv(out / "waveform.csv", ["t", "omega"],
                      np.column_stack([curve.times, result.pulse(curve.times)])))
    cols, rows = _curve_rows(curve)
    man.add(write_csv(out / "curve.csv", cols, rows))
    try:
        cols, rows, cm = curvature_table(p.model, result.pulse, curve)
        man.add(write_csv(out / "curvatures.csv", cols, rows))
        man.metrics["curvatures"] = cm
    except DegenerateFrameError as err:
        man.metrics["curvatures"] = {"error": str(err)}
    if result.verification is not None:
        cols, rows = _sweep_rows(result.verification)
        man.add(write_csv(out / "sweep.csv", cols, rows))


def _write_starts(starts, names, out: Path, man: RunManifest):
    cols = ["index", "residual", "objective", "simplex_objective", "nfev", "accepted"] + list(names)
    rows = [[s.index, s.residual, s.objective, s.simplex_objective, s.nfev, int(s.accepted), *s.params]
            for s in sorted(starts, key=lambda s: s.index)]
    man.add(write_csv(out / "starts.csv", cols, np.array(rows, dtype=float).reshape(-1, len(cols))))


def cmd_design(cfg: RunConfig, out: Path, man: RunManifest, threads: int = 1, seed=None):
    problem = build_problem(cfg, seed)
    man.metrics.update(n_sym=problem.n_sym, k=problem.k, target_gate=problem.target_gate,
                       ansatz=problem.ansatz.kind, bounds=problem.ansatz.bounds_dict(),
                       seed=problem.optimizer.seed)
    from .design import design
    with _mapper(threads) as map_fn:
        try:
            result = design(problem, map_fn, batch_size=max(1, threads))
        except ConvergenceError as err:
            _write_starts(err.starts, problem.ansatz.names, out, man)
            man.metrics.update(best_residual=err.best.residual, best_objective=err.best.objective,
                               best_start=err.best.index,
                               best_parameters=dict(zip(problem.ansatz.names, err.best.params)))
            raise
        except InconclusiveGateError as err:
            _record_design(err.result, out, man, map_fn)
            raise
        _record_design(result, out, man, map_fn)


def _record_design(result: DesignResult, out: Path, man: RunManifest, map_fn):
    _write_starts(result.starts, result.problem.ansatz.names, out, man)
    _write_design(result, out, man, map_fn)
    man.metrics.update(result.headline())
    man.metrics.update(
        parameters=result.parameters(),
        duration=result.duration,
        gate_classification=result.classification.to_dict(),
        closure_diagnostics={
            "frame_term": result.closure.frame_term,
            "displacement_term": result.closure.displacement_term,
            "plane_angles": result.closure.plane_angles,
            "rotating_dim": result.closure.rotating_dim,
            "target_angle": result.closure.target_angle,
        },
    )


def cmd_verify(cfg: RunConfig, out: Path, man: RunManifest, threads: int = 1):
    model = build_model(cfg)
    spec = build_pulse(cfg)
    if spec.duration <= 0:
        raise ConfigError("verify needs a pulse of positive duration")
    eps = build_epsilons(cfg)
    H, grid, traj, curve = _curve(cfg, model, spec)
    with _mapper(threads) as map_fn:
        res = scaling_exponent(H, model.noise_operator(), eps, grid, map_fn)
    cols, rows = _sweep_rows(res)
    man.add(write_csv(out / "sweep.csv", cols, rows))
    G = closure_residual(curve)
    cls = extract_gate(traj.final)
    man.metrics.update(scaling_slope=res.slope, intercept=res.intercept, steps=grid.steps,
                       points_used=int(res.used.sum()), closure_residual=G,
                       closure_over_T=G / spec.duration, gate=cls.label,
                       gate_distance=cls.distance, gate_classification=cls.to_dict())


COMMANDS = {"curvatures": cmd_curvatures, "trace": cmd_trace, "design": cmd_design,
            "verify": cmd_verify}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dcgeom", description=__doc__.split("\n\n")[0].strip())
    ap.add_argument("--version", action="version", version=f"dcgeom {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {"curvatures": "analytic and numeric curvature profiles of a pulse",
             "trace": "error curve, block curves and 3D projections",
             "design": "search for a pulse whose repeated error curve closes",
             "verify": "infidelity against noise strength and the fitted slope"}
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="random seed (overrides the config)")
        p.add_argument("--threads", type=int, default=1, help="max worker processes")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def _out_dir(args, cfg: RunConfig | None) -> Path:
    if args.out:
        return Path(args.out)
    if os.environ.get("DCGEOM_OUT"):
        return Path(os.environ["DCGEOM_OUT"])
    if cfg is not None and "out" in cfg.data:
        return cfg.root / cfg.data["out"]
    return Path("out")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        cfg = load(args.config)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.seed if args.seed is None else args.seed
    man = RunManifest(args.command, cfg.sha256, seed, cfg.data)
    kwargs = {"seed": args.seed} if args.command == "design" else {}
    code = EXIT_OK
    try:
        COMMANDS[args.command](cfg, out, man, args.threads, **kwargs)
    except (ConvergenceError, InconclusiveGateError) as err:
        code, man.status = EXIT_CONVERGENCE, "convergence_failure"
        man.message = str(err)
    except (DegenerateFrameError, DegenerateFitError) as err:
        code, man.status = EXIT_DEGENERATE, "degenerate"
        man.message = str(err)
    except ValueError as err:      # includes ConfigError
        code, man.status = EXIT_INVALID, "invalid"
        man.message = str(err)
    if code:
        print(f"error: {man.message}", file=sys.stderr)
    man.write(out)
    log.info("wrote %s", out / "manifest.json")
    if code == EXIT_OK:
        summary = {k: v for k, v in jsonable(man.metrics).items() if not isinstance(v, (dict, list))}
        print(" ".join(f"{k}={v}" for k, v in summary.items()))
    return code


if __name__ == "__main__":
    sys.exit(main())
