"""Batch front end: scenario files in, CSV reports and a summary out.

Scenario files are JSON documents with sections

    lattice   {n_steps, horizon}
    driver    {family, params, c?, alpha?}
    terminal  {family, params}
    solver    {beta?, safety?, tol?, max_iter?}

plus one optional section per subcommand (comparison, risk, malliavin,
particles).  Unknown keys anywhere are rejected before any computation
runs.  Every output is written under --out as CSV plus a summary text
block; runs are fully deterministic, so repeated invocations produce
byte-identical files.

Exit codes: 0 all checks passed, 1 input or validation trouble,
2 a verified property failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import comparison as cmp_mod
from . import malliavin as mal_mod
from . import risk as risk_mod
from .drivers import (
    DriverSpec,
    LinearDriver,
    RiskDriver,
    TerminalSpec,
    ZPart,
)
from .errors import CheckFailure, Error, InputError, IoError, ValidationError
from .fields import BetaWeight, l_beta_norm, m_beta_norm
from .lattice import build_lattice
from .particles import convergence_study
from .solver import Scenario, picard_solve

SUBCOMMANDS = ("solve", "compare", "risk", "malliavin", "particles", "norms")


# -- schema walking ---------------------------------------------------------


def _require_keys(obj, allowed, required, where):
    if not isinstance(obj, dict):
        raise InputError(f"{where}: expected an object")
    unknown = set(obj) - set(allowed)
    if unknown:
        raise InputError(f"{where}: unknown keys {sorted(unknown)}")
    missing = set(required) - set(obj)
    if missing:
        raise InputError(f"{where}: missing keys {sorted(missing)}")


def _num(obj, key, where, default=None):
    if key not in obj:
        if default is None:
            raise InputError(f"{where}: missing number '{key}'")
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise InputError(f"{where}.{key}: expected a number")
    return float(v)


def _time_fn(cfg, where):
    """Deterministic time profiles: a number or {const|affine: ...}."""
    if isinstance(cfg, (int, float)) and not isinstance(cfg, bool):
        return float(cfg)
    _require_keys(cfg, ("const", "affine"), (), where)
    if "const" in cfg:
        return float(cfg["const"])
    c0, c1 = cfg["affine"]
    return lambda t, a=float(c0), b=float(c1): a + b * t


def _surface_fn(cfg, where):
    """Source profiles phi(t, s): a number or {const|affine_ts: [c,ct,cs]}."""
    if cfg is None:
        return None
    if isinstance(cfg, (int, float)) and not isinstance(cfg, bool):
        return float(cfg)
    _require_keys(cfg, ("const", "affine_ts"), (), where)
    if "const" in cfg:
        return float(cfg["const"])
    c0, ct, cs = (float(v) for v in cfg["affine_ts"])
    return lambda t, s: c0 + ct * t + cs * s


def parse_driver(cfg, where="driver") -> DriverSpec:
    _require_keys(cfg, ("family", "params", "c", "alpha"), ("family",), where)
    family = cfg.get("family")
    params = cfg.get("params", {})
    c = cfg.get("c")
    alpha = cfg.get("alpha")
    if family == "linear":
        _require_keys(params, ("f", "g", "f_source", "g_source"), (),
                      f"{where}.params")
        return LinearDriver(
            f=params.get("f"), g=params.get("g"),
            f_source=_surface_fn(params.get("f_source"), f"{where}.f_source"),
            g_source=_surface_fn(params.get("g_source"), f"{where}.g_source"),
            c=c, alpha=alpha,
        )
    if family == "risk":
        _require_keys(params, ("rate", "h", "g", "rate_bound"), ("rate",),
                      f"{where}.params")
        return RiskDriver(
            rate=_time_fn(params["rate"], f"{where}.rate"),
            h=parse_zpart(params.get("h"), f"{where}.h"),
            g=parse_zpart(params.get("g"), f"{where}.g"),
            rate_bound=params.get("rate_bound"),
            c=c, alpha=alpha,
        )
    raise InputError(f"{where}.family: unknown family '{family}'")


def parse_zpart(cfg, where) -> ZPart:
    if cfg is None:
        return ZPart()
    _require_keys(cfg, ("kind", "k0", "k1"), ("kind",), where)
    return ZPart(kind=cfg["kind"], k0=float(cfg.get("k0", 0.0)),
                 k1=float(cfg.get("k1", 0.0)))


def parse_terminal(cfg, where="terminal") -> TerminalSpec:
    _require_keys(cfg, ("family", "params"), ("family",), where)
    family = cfg["family"]
    params = cfg.get("params", {})
    _require_keys(params, ("phi", "theta", "smooth"), (), f"{where}.params")
    phi = _time_fn(params.get("phi", 0.0), f"{where}.phi")
    theta = params.get("theta")
    smooth_cfg = params.get("smooth", [])
    if family == "deterministic":
        if theta is not None or smooth_cfg:
            raise InputError(f"{where}: deterministic family takes phi only")
        return TerminalSpec(phi=phi)
    if family == "affine":
        if smooth_cfg:
            raise InputError(f"{where}: affine family takes phi and theta")
        return TerminalSpec(
            phi=phi, theta=_time_fn(theta or 0.0, f"{where}.theta")
        )
    if family == "smooth":
        smooth = []
        for k, entry in enumerate(smooth_cfg):
            _require_keys(entry, ("kind", "coef"), ("kind", "coef"),
                          f"{where}.smooth[{k}]")
            smooth.append((entry["kind"],
                           _time_fn(entry["coef"], f"{where}.smooth[{k}]")))
        th = None if theta is None else _time_fn(theta, f"{where}.theta")
        return TerminalSpec(phi=phi, theta=th, smooth=smooth)
    raise InputError(f"{where}.family: unknown family '{family}'")


TOP_KEYS = ("lattice", "driver", "terminal", "solver",
            "comparison", "risk", "malliavin", "particles")


def load_scenario_file(path: Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read scenario file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"scenario file is not valid JSON: {exc}") from exc
    _require_keys(doc, TOP_KEYS, ("lattice",), "scenario")
    lat_cfg = doc["lattice"]
    _require_keys(lat_cfg, ("n_steps", "horizon"), ("n_steps", "horizon"),
                  "lattice")
    solver_cfg = doc.get("solver", {})
    _require_keys(solver_cfg, ("beta", "safety", "tol", "max_iter"), (),
                  "solver")
    return doc


def build_base_scenario(doc) -> tuple[Scenario, float, int]:
    lat_cfg = doc["lattice"]
    lat = build_lattice(int(lat_cfg["n_steps"]), float(lat_cfg["horizon"]))
    if "driver" not in doc or "terminal" not in doc:
        raise InputError("scenario: solve needs driver and terminal sections")
    driver = parse_driver(doc["driver"])
    terminal = parse_terminal(doc["terminal"])
    solver_cfg = doc.get("solver", {})
    sc = Scenario(
        lat, driver, terminal,
        beta=solver_cfg.get("beta"),
        safety=_num(solver_cfg, "safety", "solver", 1.5),
    )
    tol = _num(solver_cfg, "tol", "solver", 1e-10)
    max_iter = int(_num(solver_cfg, "max_iter", "solver", 200))
    return sc, tol, max_iter


# -- emission ----------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: Path, header: list[str], rows: list[tuple]) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def write_summary(path: Path, lines: list[str]) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


# -- subcommand bodies -------------------------------------------------------


def _run_solve(doc, out_dir: Path, emit_norms: bool) -> tuple[int, list[str]]:
    sc, tol, max_iter = build_base_scenario(doc)
    y, z, rep = picard_solve(sc, tol=tol, max_iter=max_iter)
    rows = [
        (k + 1, rep.diff_trace[k],
         rep.ratio_trace[k - 1] if k >= 1 else "")
        for k in range(len(rep.diff_trace))
    ]
    write_csv(out_dir / "solver_trace.csv",
              ["iteration", "diff_norm", "ratio"], rows)
    y_rows = [(i, float(np.mean(y[i].values)), float(np.min(y[i].values)),
               float(np.max(y[i].values)))
              for i in range(sc.lattice.n_steps + 1)]
    write_csv(out_dir / "solution_y.csv",
              ["t_idx", "mean", "min", "max"], y_rows)
    lines = [
        f"iterations: {rep.iterations}",
        f"gamma_theory: {_fmt(rep.gamma_theory)}",
        f"final_residual: {_fmt(rep.final_residual)}",
        f"norm_restricted: {_fmt(rep.final_norms[0])}",
        f"norm_full: {_fmt(rep.final_norms[1])}",
    ]
    failed = rep.final_residual > 10 * tol
    if emit_norms:
        w = BetaWeight(sc.beta)
        m2 = m_beta_norm(y, z, w) ** 2
        l2 = l_beta_norm(y, z, w) ** 2
        write_csv(out_dir / "norms.csv",
                  ["m_beta_sq", "l_beta_sq", "lower_ok", "upper_ok"],
                  [(m2, l2, int(m2 <= l2 + 1e-10), int(l2 <= 2 * m2 + 1e-10))])
        ok = m2 <= l2 + 1e-10 and l2 <= 2 * m2 + 1e-10
        lines.append(f"norm_equivalence: {'PASS' if ok else 'FAIL'}")
        failed = failed or not ok
    lines.append(f"verdict: {'FAIL' if failed else 'PASS'}")
    return (2 if failed else 0), lines


def _run_compare(doc, out_dir: Path) -> tuple[int, list[str]]:
    if "comparison" not in doc:
        raise InputError("scenario: compare needs a comparison section")
    cfg = doc["comparison"]
    _require_keys(
        cfg,
        ("f1", "fbar", "f2", "g", "zeta1", "zeta2", "zetabar", "p_max"),
        ("f1", "fbar", "f2", "zeta1", "zeta2"),
        "comparison",
    )
    lat_cfg = doc["lattice"]
    lat = build_lattice(int(lat_cfg["n_steps"]), float(lat_cfg["horizon"]))
    solver_cfg = doc.get("solver", {})
    cs = cmp_mod.ComparisonScenario(
        lattice=lat,
        f1=parse_driver(cfg["f1"], "comparison.f1"),
        fbar=parse_driver(cfg["fbar"], "comparison.fbar"),
        f2=parse_driver(cfg["f2"], "comparison.f2"),
        g=parse_driver(cfg["g"], "comparison.g") if "g" in cfg
        else LinearDriver(),
        zeta1=parse_terminal(cfg["zeta1"], "comparison.zeta1"),
        zeta2=parse_terminal(cfg["zeta2"], "comparison.zeta2"),
        zetabar=parse_terminal(cfg["zetabar"], "comparison.zetabar")
        if "zetabar" in cfg else None,
        beta=solver_cfg.get("beta"),
        safety=_num(solver_cfg, "safety", "solver", 1.5),
        tol=_num(solver_cfg, "tol", "solver", 1e-12),
        max_iter=int(_num(solver_cfg, "max_iter", "solver", 300)),
    )
    verdict = cmp_mod.compare_solve(cs)
    write_csv(out_dir / "compare.csv", ["t_idx", "min_gap"],
              list(enumerate(verdict.min_gap_by_node)))
    lines = [f"min_gap: {_fmt(verdict.min_gap)}"]
    p_max = int(cfg.get("p_max", 0))
    if p_max > 0:
        chain = cmp_mod.monotone_iteration(cs, p_max)
        rows = []
        for p in range(1, len(chain)):
            worst = max(
                float(np.max(chain[p][i].values - chain[p - 1][i].values))
                for i in range(lat.n_steps + 1)
            )
            rows.append((p, worst))
        write_csv(out_dir / "chain.csv", ["p", "worst_rise"], rows)
        lines.append(f"chain_steps: {p_max}")
    lines.append(f"verdict: {'PASS' if verdict.passed else 'FAIL'}")
    return (0 if verdict.passed else 2), lines


def _run_risk(doc, out_dir: Path) -> tuple[int, list[str]]:
    if "risk" not in doc:
        raise InputError("scenario: risk needs a risk section")
    cfg = doc["risk"]
    _require_keys(
        cfg,
        ("rate", "h", "g", "rate_bound", "payoff", "payoff2", "axioms",
         "shift", "lambda", "t_idx"),
        ("rate", "payoff"),
        "risk",
    )
    lat_cfg = doc["lattice"]
    lat = build_lattice(int(lat_cfg["n_steps"]), float(lat_cfg["horizon"]))
    solver_cfg = doc.get("solver", {})
    rs = risk_mod.RiskSpec(
        lat, _time_fn(cfg["rate"], "risk.rate"),
        h=parse_zpart(cfg.get("h"), "risk.h"),
        g=parse_zpart(cfg.get("g"), "risk.g"),
        beta=solver_cfg.get("beta"),
        safety=_num(solver_cfg, "safety", "solver", 1.5),
        tol=_num(solver_cfg, "tol", "solver", 1e-12),
        max_iter=int(_num(solver_cfg, "max_iter", "solver", 300)),
        rate_bound=cfg.get("rate_bound"),
    )
    p1 = risk_mod.PayoffStream(parse_terminal(cfg["payoff"], "risk.payoff"))
    p2 = None
    if "payoff2" in cfg:
        p2 = risk_mod.PayoffStream(
            parse_terminal(cfg["payoff2"], "risk.payoff2")
        )
    profile = risk_mod.rho(rs, p1)
    write_csv(out_dir / "rho.csv", ["t_idx", "mean", "min", "max"],
              [(i, float(np.mean(profile[i].values)),
                float(np.min(profile[i].values)),
                float(np.max(profile[i].values)))
               for i in range(lat.n_steps + 1)])
    axioms = cfg.get("axioms", ["translation"])
    shift = _num(cfg, "shift", "risk", 1.0)
    lam = _num(cfg, "lambda", "risk", 0.5)
    t_idx = int(_num(cfg, "t_idx", "risk", 0))
    reports = []
    for name in axioms:
        if name == "translation":
            rep = risk_mod.axiom_translation(rs, p1, shift)
            write_csv(out_dir / "translation.csv",
                      ["t_idx", "difference", "predicted", "gap"], rep.rows)
        elif name == "past_independence":
            if p2 is None:
                raise InputError("risk: past_independence needs payoff2")
            rep = risk_mod.axiom_past_independence(rs, p1, p2, t_idx)
        elif name == "monotonicity":
            if p2 is None:
                raise InputError("risk: monotonicity needs payoff2")
            rep = risk_mod.axiom_monotonicity(rs, p1, p2)
        elif name == "convexity":
            if p2 is None:
                raise InputError("risk: convexity needs payoff2")
            rep = risk_mod.axiom_convexity(rs, p1, p2, lam)
        elif name == "positive_homogeneity":
            rep = risk_mod.axiom_positive_homogeneity(rs, p1, lam)
        elif name == "subadditivity":
            if p2 is None:
                raise InputError("risk: subadditivity needs payoff2")
            rep = risk_mod.axiom_subadditivity(rs, p1, p2)
        else:
            raise InputError(f"risk.axioms: unknown axiom '{name}'")
        reports.append(rep)
    write_csv(out_dir / "risk_axioms.csv",
              ["axiom", "worst_violation", "pass"],
              [(r.axiom, r.worst_violation, int(r.passed)) for r in reports])
    lines = [f"{r.axiom}: {'PASS' if r.passed else 'FAIL'} "
             f"(worst {_fmt(r.worst_violation)})" for r in reports]
    ok = all(r.passed for r in reports)
    lines.append(f"verdict: {'PASS' if ok else 'FAIL'}")
    return (0 if ok else 2), lines


def _run_malliavin(doc, out_dir: Path) -> tuple[int, list[str]]:
    sc, tol, max_iter = build_base_scenario(doc)
    cfg = doc.get("malliavin", {})
    _require_keys(cfg, ("r_idx",), (), "malliavin")
    y, z, _ = picard_solve(sc, tol=tol, max_iter=max_iter)
    n = sc.lattice.n_steps
    r_list = [int(cfg["r_idx"])] if "r_idx" in cfg else list(range(n))
    rows = []
    worst = 0.0
    for r in r_list:
        rep = mal_mod.check_clark_ocone(y, z, r)
        for (i, rr, gap) in rep.rows:
            rows.append((i, rr, gap))
        worst = max(worst, rep.worst)
    write_csv(out_dir / "clark_ocone.csv", ["t_idx", "r_idx", "residual"],
              rows)
    ok = worst <= 1e-10
    lines = [f"clark_ocone_worst: {_fmt(worst)}",
             f"verdict: {'PASS' if ok else 'FAIL'}"]
    return (0 if ok else 2), lines


def _run_particles(doc, out_dir: Path) -> tuple[int, list[str]]:
    sc, tol, max_iter = build_base_scenario(doc)
    cfg = doc.get("particles", {})
    _require_keys(cfg, ("n_list",), (), "particles")
    n_list = [int(v) for v in cfg.get("n_list", [1, 2, 3])]
    rows = convergence_study(sc, n_list, tol=tol, max_iter=max_iter)
    write_csv(out_dir / "particles.csv", ["n", "t_idx", "e_n"], rows)
    sums = {}
    for (npart, _, gap) in rows:
        sums[npart] = sums.get(npart, 0.0) + gap
    lines = [f"e_sum[n={k}]: {_fmt(v)}" for k, v in sorted(sums.items())]
    ok = True
    if len(n_list) > 1 and sums[max(n_list)] > 0:
        ok = sums[max(n_list)] <= sums[min(n_list)] + 1e-12
    lines.append(f"verdict: {'PASS' if ok else 'FAIL'}")
    return (0 if ok else 2), lines


def run(subcommand: str, scenario_path: str, out_dir: str,
        tol: float | None = None, max_iter: int | None = None) -> int:
    """Dispatch one subcommand; returns the process exit code."""
    try:
        if subcommand not in SUBCOMMANDS:
            raise InputError(f"unknown subcommand '{subcommand}'")
        doc = load_scenario_file(Path(scenario_path))
        if tol is not None:
            doc.setdefault("solver", {})["tol"] = tol
        if max_iter is not None:
            doc.setdefault("solver", {})["max_iter"] = max_iter
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if subcommand in ("solve", "norms"):
            code, lines = _run_solve(doc, out, emit_norms=subcommand == "norms")
        elif subcommand == "compare":
            code, lines = _run_compare(doc, out)
        elif subcommand == "risk":
            code, lines = _run_risk(doc, out)
        elif subcommand == "malliavin":
            code, lines = _run_malliavin(doc, out)
        else:
            code, lines = _run_particles(doc, out)
        write_summary(out / "summary.txt", lines)
        return code
    except (InputError, ValidationError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    except CheckFailure as exc:
        print(f"check failure: {exc}", file=sys.stderr)
        return 2
    except Error as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mfbdsvie",
        description="exact lattice runs for the doubly stochastic "
                    "Volterra solver and its verification checks",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--scenario", required=True, help="JSON scenario file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--tol", type=float, default=None)
        p.add_argument("--max-iter", type=int, default=None)
    args = parser.parse_args(argv)
    return run(args.subcommand, args.scenario, args.out,
               tol=args.tol, max_iter=args.max_iter)


if __name__ == "__main__":
    sys.exit(main())
