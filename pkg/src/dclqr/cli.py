"""Command-line entry point: ``dclqr {synthesize,simulate,montecarlo,scatter}``.

Exit codes: 0 success, 2 config error, 3 solver failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .experiments import (
    ConfigError,
    ExperimentConfig,
    _streams,
    build_inclusion,
    emit_scatter,
    origin_lqr,
    run_monte_carlo,
    run_single_experiment,
)
from .model import ModelError
from .sdp import SynthesisError, synthesize, verify_certificate
from .simulation import SimConfig, simulate_closed_loop, write_trajectory_csv
from .solver import dump_problem
from .statistics import NotPositiveDefinite, lyapunov_gramian, psd_factor, UnstableClosedLoop

log = logging.getLogger("dclqr")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4


class SolverFailure(RuntimeError):
    pass


def _load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return ExperimentConfig.load(path)


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_synthesize(args) -> int:
    cfg = _load_config(args.config)
    out = {"method": args.method}
    if args.method == "lqr":
        K = origin_lqr(cfg)
        A0, B0 = cfg.plant.jacobians(np.zeros(2), np.zeros(1))
        try:
            Sigma = lyapunov_gramian(A0, B0, K, cfg.noise.V, cfg.noise.W).tolist()
        except UnstableClosedLoop:
            Sigma = None
        out.update(status="optimal", K=K.tolist(), Sigma=Sigma, objective=None)
        _write_json(args.out, out)
        return EXIT_OK

    grid_rng, _, _ = _streams((cfg.master_seed, 0))
    inc, data, _, _ = build_inclusion(cfg, grid_rng)
    sol = synthesize(args.method, inc, cfg.weights, cfg.noise, data, gamma=cfg.gamma,
                     gamma_prime=cfg.gamma_prime, cfg=cfg.solver)
    if args.dump_sdp and sol.problem is not None:
        with open(args.dump_sdp, "w") as fh:
            dump_problem(sol.problem, fh)
    out.update(
        status=sol.status,
        objective=None if not np.isfinite(sol.objective) else sol.objective,
        vertices=len(inc),
        K=None if sol.K is None else sol.K.tolist(),
        Sigma=None if sol.Sigma is None else sol.Sigma.tolist(),
        min_lmi_residual=min(sol.residuals.values()) if sol.residuals else None,
    )
    if sol.usable:
        report = verify_certificate(sol, inc, cfg.noise)
        out["certificate"] = {"passed": report.passed, "violations": list(report.violations)}
    _write_json(args.out, out)
    if not sol.usable:
        raise SolverFailure(f"{args.method} synthesis: {sol.status}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    try:
        gain_doc = json.loads(Path(args.gain).read_text())
        K = np.array(gain_doc["K"] if isinstance(gain_doc, dict) else gain_doc, dtype=float)
        K = K.reshape(1, 2)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{args.gain}: cannot read a 1x2 gain ({exc})") from None
    x0_ss, noise_ss = np.random.SeedSequence(args.seed).spawn(2)
    x0_cov = np.array(cfg.x0_cov if cfg.x0_cov is not None else cfg.grid_state_cov)
    x0 = psd_factor(x0_cov) @ np.random.default_rng(x0_ss).standard_normal(2)
    noise_seed = int(noise_ss.generate_state(1, np.uint64)[0])
    sim = SimConfig(np.array(cfg.W), np.array(cfg.V), cfg.horizon, cfg.threshold, noise_seed)
    traj = simulate_closed_loop(cfg.plant, K, x0, sim)
    write_trajectory_csv(traj, args.out, {
        "seed": args.seed, "noise_seed": noise_seed, "K": K.tolist(),
        "x0": x0.tolist(), "config": cfg.to_dict(),
    })
    print(f"stable={traj.stable} steps={len(traj.inputs)}")
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    cfg = _load_config(args.config)
    changes = {}
    if args.reps is not None:
        changes["repetitions"] = args.reps
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if changes:
        cfg = cfg.replace(**changes)

    def progress(done, total):
        if args.verbose and (done % 10 == 0 or done == total):
            print(f"{done}/{total}", file=sys.stderr)

    report = run_monte_carlo(cfg, workers=args.workers, progress=progress)
    Path(args.out).write_text(report.to_json())
    for name, agg in report.controllers.items():
        print(f"{name:>7}: {agg['percentage']:5.1f}% stable "
              f"({agg['stable_count']}/{agg['total']}, {agg['failed_count']} synthesis failures)")
    print(f"elapsed {report.elapsed_seconds:.1f} s", file=sys.stderr)
    return EXIT_OK


def cmd_scatter(args) -> int:
    cfg = _load_config(args.config)
    result = run_single_experiment(cfg, (args.seed, 0))
    emit_scatter(result, args.out)
    for name, run in result.controllers.items():
        print(f"{name}: {run.status}, stable={run.stable}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dclqr", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", help="compute a gain and write it as JSON")
    p.add_argument("--config")
    p.add_argument("--method", required=True,
                   choices=["lqr", "robust", "dc-state", "dc-state-input"])
    p.add_argument("--out", required=True)
    p.add_argument("--dump-sdp", metavar="FILE", help="also write the SDP in sparse conic text form")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("simulate", help="simulate the benchmark plant under a gain")
    p.add_argument("--config")
    p.add_argument("--gain", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("montecarlo", help="run the stability study")
    p.add_argument("--config")
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("scatter", help="write (a12, b21) parameter scatter data")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scatter)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ModelError, NotPositiveDefinite) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverFailure, SynthesisError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
