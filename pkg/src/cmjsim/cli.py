"""Command-line interface.

Subcommands::

    analyze     validate model assumptions and print the spectral analysis
    constants   print every limit constant with its error certificate
    simulate    run a replicate batch and write per-replicate CSV
    verify      run the full statistical acceptance battery (PASS/FAIL)
    star-check  pathwise recentering identity for the star transform

Exit codes: 0 success / statistical PASS; 1 usage or schema error (the
message names the offending key); 2 model-assumption failure, requested-case
mismatch, or an unusable run (abort rate); 3 statistical FAIL.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from fractions import Fraction
from typing import Mapping

import numpy as np

from .characteristics import (
    Characteristic,
    NoiseLaw,
    expected_process,
    make_indicator_characteristic,
    make_phi1,
    star_transform,
)
from .constants import TheoreticalConstants, compute_constants
from .model import build_model, validate_assumptions
from .presets import PRESETS, preset
from .scenario import Scenario, ScenarioError, load_scenario, parse_row
from .simulator import run_batch, run_replicate
from .spectral import spectral_decompose
from .stats import lln_check, studentized, verify_dichotomy

__all__ = ["main", "build_characteristic"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ASSUMPTION = 2
EXIT_STAT_FAIL = 3


# ---------------------------------------------------------------------------
# serialization helpers
# ---------------------------------------------------------------------------

def _to_jsonable(x):
    if x is None or isinstance(x, (bool, int, str)):
        return x
    if isinstance(x, float):
        return x
    if isinstance(x, complex):
        return {"re": float(x.real), "im": float(x.imag)}
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.complexfloating,)):
        return {"re": float(x.real), "im": float(x.imag)}
    if isinstance(x, np.ndarray):
        return [_to_jsonable(v) for v in x.tolist()]
    if isinstance(x, Mapping):
        return {_key(k): _to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, set)):
        return [_to_jsonable(v) for v in x]
    if dataclasses.is_dataclass(x):
        return _to_jsonable(dataclasses.asdict(x))
    return str(x)


def _key(k) -> str:
    if isinstance(k, tuple):
        return ",".join(str(v) for v in k)
    return str(k)


def _emit(report: dict, out: str | None) -> None:
    text = json.dumps(_to_jsonable(report), indent=2, sort_keys=True)
    print(text)
    if out:
        os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
        with open(out, "w") as fh:
            fh.write(text + "\n")


# ---------------------------------------------------------------------------
# scenario -> domain objects
# ---------------------------------------------------------------------------

def _load(scenario_arg: str) -> Scenario:
    if os.path.exists(scenario_arg):
        return load_scenario(scenario_arg)
    if scenario_arg in PRESETS:
        return preset(scenario_arg)
    raise ScenarioError(
        f"scenario: {scenario_arg!r} is neither a file nor a preset "
        f"(presets: {', '.join(PRESETS)})"
    )


def _row_floats(row) -> np.ndarray:
    return np.array([float(v) for v in parse_row(row)], dtype=float)


def build_characteristic(scn: Scenario, model, S) -> tuple[Characteristic, np.ndarray | None]:
    """Characteristic named by the scenario, plus the indicator row when the
    kind admits the independent direct-route variance."""
    spec = scn.characteristic
    kind = spec["kind"]
    if kind == "indicator":
        row = _row_floats(spec["row"])
        return make_indicator_characteristic(row), row
    if kind == "kesten_stigum":
        row = _row_floats(spec["row"])
        phi = make_phi1(S, row, model=model, k_min=scn.n - scn.N + 1)
        return phi, None
    if kind == "table":
        base = {int(k): _row_floats(r) for k, r in spec.get("base", {}).items()}
        return Characteristic(J=model.J, base=base, label="table"), None
    if kind == "custom":
        base = {int(k): _row_floats(r) for k, r in spec.get("base", {}).items()}
        coeff = {int(k): _row_floats(r) for k, r in spec.get("coeff", {}).items()}
        noise = {}
        for cell in spec.get("noise", []):
            law = NoiseLaw(
                probs=tuple(float(v) for v in parse_row(cell["probs"])),
                values=tuple(complex(float(v)) for v in parse_row(cell["values"])),
            )
            noise[(int(cell["age"]), int(cell["type"]) - 1)] = law
        return Characteristic(J=model.J, base=base, coeff=coeff, noise=noise, label="custom"), None
    raise ScenarioError(f"characteristic.kind: unsupported kind {kind!r}")


def _spectral_report(S) -> dict:
    return {
        "rho": S.rho,
        "sqrt_rho": S.sqrt_rho,
        "u": S.u,
        "v": S.v,
        "theta": S.theta,
        "delta": S.delta,
        "decay_C": S.decay_C,
        "clusters": [
            {
                "eigenvalue": complex(cl.eigenvalue),
                "multiplicity": cl.multiplicity,
                "nilpotent_index": cl.nilpotent_index,
                "label": cl.label,
                "margin": cl.margin,
            }
            for cl in S.clusters
        ],
        "residuals": S.residuals,
        "worst_residual": max(S.residuals.values()),
    }


def _assumption_report(rep) -> dict:
    return {
        "supercritical": rep.gw1_supercritical,
        "positively_regular": rep.gw2_positively_regular,
        "nondegenerate": rep.gw3_nondegenerate,
        "all_ok": rep.all_ok,
        "rho": rep.rho,
        "details": rep.details,
    }


def _constants_report(const: TheoreticalConstants) -> dict:
    return {
        "x1": const.x1,
        "x2": const.x2,
        "sigma_l": list(const.sigma_l),
        "l_star": const.l_star,
        "sigma2": const.sigma2,
        "sigma2_error": const.sigma2_error,
        "sigma_star2": const.sigma_star2,
        "sigma_star2_error": const.sigma_star2_error,
        "case": const.case,
        "sigma_case2": const.sigma_case2,
        "B_window": list(const.B_window),
        "B_table": {str(k): v for k, v in const.B_table.items()},
        "notes": const.notes,
    }


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_analyze(args) -> int:
    scn = _load(args.scenario)
    model = build_model(scn.model)
    assumptions = validate_assumptions(model)
    report: dict = {"scenario": scn.to_dict()["model"], "assumptions": _assumption_report(assumptions)}
    code = EXIT_OK if assumptions.all_ok else EXIT_ASSUMPTION
    try:
        S = spectral_decompose(model.A)
        report["spectral"] = _spectral_report(S)
    except ArithmeticError as exc:
        report["spectral_error"] = str(exc)
        code = EXIT_ASSUMPTION
    _emit(report, args.out)
    return code


def _cmd_constants(args) -> int:
    scn = _load(args.scenario)
    model = build_model(scn.model)
    assumptions = validate_assumptions(model)
    S = spectral_decompose(model.A)
    phi, a_row = build_characteristic(scn, model, S)
    const = compute_constants(
        a_row if a_row is not None else phi, S, model, eps_tail=scn.run["eps_tail"]
    )
    report = {
        "assumptions": _assumption_report(assumptions),
        "spectral": _spectral_report(S),
        "constants": _constants_report(const),
    }
    _emit(report, args.out)
    return EXIT_OK if assumptions.all_ok else EXIT_ASSUMPTION


def _run_batch_from(scn: Scenario, model, S, phi, const, args):
    seed = scn.run["seed"] if args.seed is None else args.seed
    workers = scn.run["workers"] if args.workers is None else args.workers
    return run_batch(
        model,
        [phi],
        scn.n,
        scn.N,
        scn.run["replicates"],
        seed,
        S=S,
        constants=const,
        ns=scn.times,
        workers=workers,
    )


def _cmd_simulate(args) -> int:
    scn = _load(args.scenario)
    model = build_model(scn.model)
    S = spectral_decompose(model.A)
    phi, a_row = build_characteristic(scn, model, S)
    const = compute_constants(
        a_row if a_row is not None else phi, S, model, eps_tail=scn.run["eps_tail"]
    )
    batch = _run_batch_from(scn, model, S, phi, const, args)
    out = args.out
    if out is None:
        os.makedirs(scn.output["dir"], exist_ok=True)
        out = os.path.join(scn.output["dir"], "simulate.csv")
    else:
        parent = os.path.dirname(os.path.abspath(out))
        os.makedirs(parent, exist_ok=True)
    batch.to_csv(out, phi_index=0, t=scn.n)
    summary = batch.summary()
    summary["csv"] = out
    print(json.dumps(_to_jsonable(summary), indent=2, sort_keys=True))
    if batch.abort_rate > 0.10:
        print(f"abort rate {batch.abort_rate:.1%} exceeds 10%", file=sys.stderr)
        return EXIT_ASSUMPTION
    return EXIT_OK


def _cmd_verify(args) -> int:
    scn = _load(args.scenario)
    model = build_model(scn.model)
    assumptions = validate_assumptions(model)
    if not assumptions.all_ok:
        _emit({"assumptions": _assumption_report(assumptions), "verdict": "REFUSED"}, args.out)
        return EXIT_ASSUMPTION
    S = spectral_decompose(model.A)
    phi, a_row = build_characteristic(scn, model, S)
    const = compute_constants(
        a_row if a_row is not None else phi, S, model, eps_tail=scn.run["eps_tail"]
    )
    batch = _run_batch_from(scn, model, S, phi, const, args)
    try:
        report = verify_dichotomy(
            batch,
            const,
            S,
            w_min=scn.run["w_min"],
            requested_case=scn.run["case"],
        )
    except (ValueError, RuntimeError) as exc:
        _emit(
            {
                "assumptions": _assumption_report(assumptions),
                "constants": _constants_report(const),
                "verdict": "REFUSED",
                "reason": str(exc),
            },
            args.out,
        )
        return EXIT_ASSUMPTION
    lln = lln_check(batch, phi, model, S, w_min=scn.run["w_min"])
    payload = {
        "assumptions": _assumption_report(assumptions),
        "constants": _constants_report(const),
        "verification": report.to_dict(),
        "lln": lln,
        "verdict": "PASS" if report.passed else "FAIL",
    }
    _emit(payload, args.out)
    if args.emit_hist:
        eps, _ = studentized(batch, const, phi_index=0, t=scn.n, w_min=scn.run["w_min"])
        vals = np.asarray([e.real for e in eps], dtype=float)
        counts, edges = np.histogram(vals, bins=max(10, int(math.sqrt(max(vals.size, 1)) * 2)))
        hist = {
            "bin_edges": edges,
            "counts": counts,
            "mean": float(vals.mean()) if vals.size else None,
            "var": float(vals.var(ddof=1)) if vals.size > 1 else None,
        }
        parent = os.path.dirname(os.path.abspath(args.emit_hist))
        os.makedirs(parent, exist_ok=True)
        with open(args.emit_hist, "w") as fh:
            fh.write(json.dumps(_to_jsonable(hist), indent=2, sort_keys=True) + "\n")
    print(f"verdict: {'PASS' if report.passed else 'FAIL'}")
    return EXIT_OK if report.passed else EXIT_STAT_FAIL


def _cmd_star_check(args) -> int:
    scn = _load(args.scenario)
    model = build_model(scn.model)
    S = spectral_decompose(model.A)
    phi, _ = build_characteristic(scn, model, S)
    if not phi.is_deterministic:
        raise ScenarioError("characteristic.kind: star-check needs a deterministic characteristic")
    n, N = scn.n, scn.N
    star = star_transform(phi, S, None, model=model, n_max=n)
    seed = scn.run["seed"] if args.seed is None else args.seed
    reps = min(scn.run["replicates"], 64)
    worst = 0.0
    ez = complex(expected_process(phi, model, n))
    scale = 1.0 + abs(ez)
    for idx in range(reps):
        r = run_replicate(
            model,
            [phi, star.characteristic],
            n,
            N,
            np.random.SeedSequence(entropy=seed, spawn_key=(idx,)),
            ns=[n],
            index=idx,
        )
        resid = abs(r.zphi[(1, n)] - (r.zphi[(0, n)] - ez)) / scale
        worst = max(worst, resid)
    tol = 1e-8
    passed = worst <= tol
    report = {
        "replicates": reps,
        "time": n,
        "expected_process": ez,
        "max_relative_residual": worst,
        "tolerance": tol,
        "window": [star.k_lo, star.k_hi],
        "summability": {
            "partial_sum": star.sum_sq,
            "last_ratio": star.sum_sq_ratio,
            "converged": star.sum_sq_converged,
        },
        "verdict": "PASS" if passed else "FAIL",
    }
    _emit(report, args.out)
    return EXIT_OK if passed else EXIT_STAT_FAIL


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cmjsim",
        description="Multitype branching processes counted with random "
        "characteristics: exact constants, exact simulation, statistical checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "analyze": "model assumptions and spectral analysis",
        "constants": "limit constants with error certificates",
        "simulate": "replicate batch -> CSV",
        "verify": "statistical acceptance battery",
        "star-check": "pathwise recentering identity",
    }
    parsers = {}
    for name, help_text in specs.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--scenario", required=True, help="scenario YAML path or preset name")
        sp.add_argument("--seed", type=int, default=None, help="override run.seed")
        sp.add_argument("--workers", type=int, default=None, help="override run.workers")
        sp.add_argument("--out", default=None, help="also write the JSON report/CSV here")
        parsers[name] = sp
    parsers["verify"].add_argument(
        "--emit-hist", default=None, help="write a histogram of the studentized statistic"
    )
    return parser


_DISPATCH = {
    "analyze": _cmd_analyze,
    "constants": _cmd_constants,
    "simulate": _cmd_simulate,
    "verify": _cmd_verify,
    "star-check": _cmd_star_check,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses exit code 2 for usage errors
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return _DISPATCH[args.command](args)
    except (ScenarioError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ArithmeticError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION


if __name__ == "__main__":
    sys.exit(main())
