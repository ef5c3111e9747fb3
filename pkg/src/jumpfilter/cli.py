"""Command-line entry point.

Subcommands: validate, simulate-signal, filter, simulate-pdmp, solve,
evaluate, verify.  Exit codes: 0 success, 1 validation or check failure,
2 usage error.  Outputs carry no timestamps, so identical (config, seed)
runs produce byte-identical files.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import filtering, paths, pdmp, signals, solver, verify
from .model import ModelError, dirac, load_model
from .rngs import stream


def _parse_mu(model, spec: str) -> np.ndarray:
    if spec == "uniform":
        return np.full(model.n_states, 1.0 / model.n_states)
    if spec.startswith("state:"):
        mu = np.zeros(model.n_states)
        mu[model.state_index(spec.split(":", 1)[1])] = 1.0
        return mu
    mu = np.asarray(json.loads(spec), dtype=np.float64)
    if mu.shape != (model.n_states,):
        raise ValueError(f"initial law needs {model.n_states} entries")
    return mu


def _emit(args, human: str, payload: dict) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(human)


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _load(args):
    return load_model(args.model, allow_degenerate_h=getattr(args, "allow_degenerate_h", False))


def cmd_validate(args) -> int:
    try:
        model = _load(args)
    except ModelError as exc:
        _emit(args, f"invalid model: {exc}", {"valid": False, "error": str(exc)})
        return 1
    _emit(args,
          f"ok: {model.n_states} states, {model.n_obs} labels, "
          f"{model.n_controls} controls, C_lambda={model.C_lambda}, C_f={model.C_f}",
          {"valid": True, "C_lambda": model.C_lambda, "C_f": model.C_f})
    return 0


def cmd_simulate_signal(args) -> int:
    model = _load(args)
    u = model.control_index(args.control) if args.control else 0
    sp = signals.simulate_signal(model, _parse_mu(model, args.mu), u,
                                 args.horizon, stream(args.seed, 0))
    yp = signals.derive_y(model, sp)
    out = _outdir(args)
    paths.write_json(paths.signal_path_to_dict(model, sp), os.path.join(out, "signal_path.json"))
    paths.write_json(paths.y_path_to_dict(model, yp), os.path.join(out, "y_path.json"))
    _emit(args, f"signal path: {len(sp.jumps)} jumps, {len(yp.jumps)} label changes -> {out}",
          {"jumps": len(sp.jumps), "label_changes": len(yp.jumps), "out": out})
    return 0


def cmd_filter(args) -> int:
    model = _load(args)
    with open(args.ypath) as fh:
        yp = paths.y_path_from_dict(model, json.load(fh))
    u = model.control_index(args.control) if args.control else 0
    fp = filtering.run_filter(model, _parse_mu(model, args.mu), yp, u,
                              sample_dt=args.sample_dt)
    out = _outdir(args)
    dest = os.path.join(out, "belief_path.csv")
    paths.filter_path_to_csv(model, fp, dest)
    degenerate = int(fp.jump_degenerate.sum())
    _emit(args, f"filter replay: {len(fp.times)} samples, {len(fp.jump_times)} jumps"
          + (f", degenerate_update={degenerate}" if degenerate else "") + f" -> {dest}",
          {"samples": len(fp.times), "jumps": len(fp.jump_times),
           "degenerate_updates": degenerate, "out": dest})
    return 0


def cmd_simulate_pdmp(args) -> int:
    model = _load(args)
    if args.solution:
        _, policy = solver.load_solution_csv(model, args.solution)
    else:
        policy = model.control_index(args.control) if args.control else 0
    nu0 = dirac(model, model.state_index(args.start_state)) if args.start_state \
        else filtering.h_update(model, _parse_mu(model, args.mu), 0)
    path, cost = pdmp.simulate_pdmp(model, nu0, policy, args.horizon, stream(args.seed, 0))
    out = _outdir(args)
    dest = os.path.join(out, "pdmp_path.json")
    paths.write_json(paths.pdmp_path_to_dict(model, path, cost), dest)
    _emit(args, f"belief path: {len(path.jumps)} jumps, cost sample {cost:.6g} -> {dest}",
          {"jumps": len(path.jumps), "cost_sample": cost, "out": dest})
    return 0


def cmd_solve(args) -> int:
    model = _load(args)
    result = solver.solve(model, k=args.k, mode=args.mode, tol=args.tol,
                          t_max=args.t_max, dt=args.dt)
    out = _outdir(args)
    value_csv = os.path.join(out, "value.csv")
    report_json = os.path.join(out, "solve_report.json")
    solver.save_solution_csv(model, result.value_field, result.policy, value_csv)
    paths.write_json(result.report, report_json)
    _emit(args, f"solved: {result.report['iterations']} sweeps, "
          f"residual {result.report['residual']:.3g} -> {value_csv}",
          result.report | {"out": value_csv})
    return 0


def cmd_evaluate(args) -> int:
    model = _load(args)
    vf, policy = solver.load_solution_csv(model, args.solution)
    mu = _parse_mu(model, args.mu)
    lifted = solver.lift_value(model, vf, mu)
    control = solver.FilterPolicyControl(model, policy, mu)
    res = signals.mc_cost(model, mu, control, args.horizon, args.n_paths,
                          args.seed, threads=args.threads)
    payload = {
        "lifted_value": lifted,
        "mc_mean": res.mean,
        "mc_stderr": res.stderr,
        "truncation_bias": res.truncation_bias,
        "gap": abs(res.mean - lifted),
    }
    out = _outdir(args)
    dest = os.path.join(out, "evaluate_report.json")
    paths.write_json(payload, dest)
    _emit(args, f"lifted value {lifted:.6g}, MC {res.mean:.6g} +- {res.stderr:.2g} -> {dest}",
          payload | {"out": dest})
    return 0


def cmd_verify(args) -> int:
    model = _load(args)
    reports = verify.run_all(model, seed=args.seed, k=args.k, n_paths=args.n_paths,
                             horizon=args.horizon, threads=args.threads)
    out = _outdir(args)
    dest = os.path.join(out, "verify_report.json")
    paths.write_json([r.to_dict() for r in reports], dest)
    failed = [r for r in reports if not r.passed and not r.vacuous]
    for r in reports:
        mark = "PASS" if r.passed else "FAIL"
        if r.vacuous:
            mark += " (vacuous)"
        if not args.json:
            print(f"[{mark}] {r.name}: stat={r.statistic:.4g} thr={r.threshold:.4g}")
    _emit(args, f"{len(reports) - len(failed)}/{len(reports)} checks passed -> {dest}",
          {"passed": len(reports) - len(failed), "total": len(reports), "out": dest})
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jumpfilter",
                                description="noise-free filtering and belief-space control "
                                            "for finite jump processes")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_required=False):
        sp.add_argument("--model", required=True, help="model JSON file")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--json", action="store_true", help="machine-readable summary")
        sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        sp.add_argument("--allow-degenerate-h", action="store_true",
                        help="accept injective or constant observation maps (testing only)")
        if seed_required:
            sp.add_argument("--seed", type=int, required=True)

    sp = sub.add_parser("validate", help="check a model file")
    common(sp)
    sp.set_defaults(fn=cmd_validate)

    sp = sub.add_parser("simulate-signal", help="simulate the hidden process and its labels")
    common(sp, seed_required=True)
    sp.add_argument("--horizon", type=float, required=True)
    sp.add_argument("--mu", default="uniform")
    sp.add_argument("--control", default=None, help="constant control label")
    sp.set_defaults(fn=cmd_simulate_signal)

    sp = sub.add_parser("filter", help="replay the filter along an observed trajectory")
    common(sp)
    sp.add_argument("--ypath", required=True, help="observed-trajectory JSON file")
    sp.add_argument("--mu", default="uniform")
    sp.add_argument("--control", default=None)
    sp.add_argument("--sample-dt", type=float, default=None)
    sp.set_defaults(fn=cmd_filter)

    sp = sub.add_parser("simulate-pdmp", help="simulate the belief process")
    common(sp, seed_required=True)
    sp.add_argument("--horizon", type=float, required=True)
    sp.add_argument("--control", default=None)
    sp.add_argument("--solution", default=None, help="value/policy CSV from solve")
    sp.add_argument("--start-state", default=None)
    sp.add_argument("--mu", default="uniform")
    sp.set_defaults(fn=cmd_simulate_pdmp)

    sp = sub.add_parser("solve", help="belief-grid value iteration")
    common(sp)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--mode", choices=["A", "B"], default="A")
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.add_argument("--dt", type=float, default=1e-2)
    sp.add_argument("--t-max", type=float, default=None)
    sp.set_defaults(fn=cmd_solve)

    sp = sub.add_parser("evaluate", help="lifted value vs Monte-Carlo cost under a solved policy")
    common(sp, seed_required=True)
    sp.add_argument("--solution", required=True)
    sp.add_argument("--mu", default="uniform")
    sp.add_argument("--horizon", type=float, default=20.0)
    sp.add_argument("--n-paths", type=int, default=20_000)
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("verify", help="run the verification battery")
    common(sp, seed_required=True)
    sp.add_argument("--k", type=int, default=8)
    sp.add_argument("--n-paths", type=int, default=20_000)
    sp.add_argument("--horizon", type=float, default=20.0)
    sp.set_defaults(fn=cmd_verify)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name in ("horizon", "n_paths", "k", "tol", "dt", "t_max", "threads", "sample_dt"):
        val = getattr(args, name, None)
        if val is not None and val <= 0:
            print(f"error: --{name.replace('_', '-')} must be positive", file=sys.stderr)
            return 2
    try:
        return args.fn(args)
    except ModelError as exc:
        print(f"invalid model: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
