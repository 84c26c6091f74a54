"""Experiment runner: ``dnprobe run <config>``, ``dnprobe presets list``, ``dnprobe schema print``.

Exit status: 0 when every check of the run passes, 3 when a check fails,
1 on a pipeline error (message printed verbatim), 2 on a configuration error
(message carries the line number).
"""

from __future__ import annotations

import argparse
import configparser
import re
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from .errors import ConfigurationError, DNProbeError

PIPELINES = ("forward", "gauge-check", "recover-da", "recover-q", "quasilinear", "carleman-audit", "moll-audit")

EXIT_OK, EXIT_PIPELINE, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2, 3


class ConfigError(ConfigurationError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


# ------------------------------------------------------------------ schema


@dataclass(frozen=True)
class KeySpec:
    type: str
    default: Optional[str]  # None means required
    doc: str


def schema_text() -> str:
    return resources.files("dnprobe").joinpath("config_schema.ini").read_text()


def load_schema() -> Dict[str, Dict[str, KeySpec]]:
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",), inline_comment_prefixes=None)
    cp.optionxform = str
    cp.read_string(schema_text())
    out: Dict[str, Dict[str, KeySpec]] = {}
    for sec in cp.sections():
        out[sec] = {}
        for key, raw in cp.items(sec):
            typ, default, doc = (p.strip() for p in raw.split("|", 2))
            out[sec][key] = KeySpec(typ, None if default == "required" else default, doc)
    return out


def _convert(typ: str, raw: str) -> Any:
    raw = raw.strip()
    if typ == "int":
        return int(raw)
    if typ == "float":
        return float(raw)
    if typ == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if typ == "floats":
        return [float(p) for p in raw.split(",") if p.strip()]
    if typ == "strs":
        return [p.strip() for p in raw.split(",") if p.strip()]
    if typ.startswith("choice("):
        options = typ[len("choice("):-1].split(",")
        if raw not in options:
            raise ValueError(f"{raw!r} is not one of {', '.join(options)}")
        return raw
    if typ == "preset":
        from .presets import COEFFICIENT_PRESETS

        if raw not in COEFFICIENT_PRESETS:
            raise ValueError(f"unknown coefficient preset {raw!r}")
        return raw
    if typ == "model":
        from .presets import MODEL_PRESETS

        if raw not in MODEL_PRESETS:
            raise ValueError(f"unknown quasi-linear model {raw!r}")
        return raw
    return raw


# ------------------------------------------------------------------ config


@dataclass
class ExperimentConfig:
    values: Dict[str, Dict[str, Any]]
    extras: Dict[str, Dict[str, float]]
    base_dir: Path
    lines: Dict[Tuple[str, str], int] = field(default_factory=dict)

    def __getitem__(self, section: str) -> Dict[str, Any]:
        return self.values[section]

    @property
    def pipeline(self) -> str:
        return self.values["run"]["pipeline"]

    @property
    def output_dir(self) -> Path:
        p = Path(self.values["run"]["output"])
        return p if p.is_absolute() else self.base_dir / p

    def as_dict(self) -> Dict[str, Any]:
        out = {s: dict(v) for s, v in self.values.items()}
        for s, extra in self.extras.items():
            out[s].update(extra)
        out["run"] = {k: v for k, v in out["run"].items() if k != "output"}
        return out


def _line_index(text: str) -> Dict[Tuple[str, str], int]:
    idx: Dict[Tuple[str, str], int] = {}
    section = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[([^\]]+)\]$", s)
        if m:
            section = m.group(1).strip()
            idx.setdefault((section, ""), n)
            continue
        m = re.match(r"^([^=:#\s][^=:]*?)\s*[=:]", s)
        if m and section is not None:
            idx.setdefault((section, m.group(1).strip()), n)
    return idx


def parse_config(text: str, base_dir: Path = Path(".")) -> ExperimentConfig:
    """Validate ``text`` against the schema and fill defaults."""
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",), inline_comment_prefixes=None,
                                   default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], getattr(exc, "lineno", None)) from None
    lines = _line_index(text)
    schema = load_schema()
    values: Dict[str, Dict[str, Any]] = {}
    extras: Dict[str, Dict[str, float]] = {}
    for sec in cp.sections():
        if sec not in schema:
            raise ConfigError(f"unknown section [{sec}]", lines.get((sec, "")))
    for sec, keys in schema.items():
        given = dict(cp.items(sec)) if cp.has_section(sec) else {}
        values[sec], extras[sec] = {}, {}
        for key, raw in given.items():
            spec = keys.get(key) or keys.get("*")
            if spec is None:
                raise ConfigError(f"unknown key {key!r} in [{sec}]", lines.get((sec, key)))
            try:
                val = _convert(spec.type, raw)
            except ValueError as exc:
                raise ConfigError(f"[{sec}] {key}: {exc}", lines.get((sec, key))) from None
            (values[sec] if key in keys else extras[sec])[key] = val
        for key, spec in keys.items():
            if key == "*" or key in values[sec]:
                continue
            if spec.default is None:
                raise ConfigError(f"missing required key {key!r} in [{sec}]", lines.get((sec, "")))
            values[sec][key] = _convert(spec.type, spec.default) if spec.default != "" else None
    cfg = ExperimentConfig(values, extras, base_dir, lines)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    """Semantic checks that need more than one key or a registry lookup."""
    from .carleman import AUDIT_PRESETS, SIDES
    from .grid import build_grid

    def fail(sec: str, key: str, msg: str):
        raise ConfigError(msg, cfg.lines.get((sec, key)) or cfg.lines.get((sec, "")))

    g = cfg["grid"]
    try:
        build_grid(g["nx"], g["ny"], g["nt"], g["Lx"], g["Ly"], g["T"])
    except ConfigurationError as exc:
        fail("grid", str(exc).split()[0], f"[grid] {exc}")
    for sec, key in (("probe", "rho_list"), ("mollifier", "rho_list"), ("quasilinear", "rho_list")):
        vals = cfg[sec][key]
        if not vals or any(not (r > 1.0) for r in vals):
            fail(sec, key, f"[{sec}] {key}: values must be > 1")
    c = cfg["carleman"]
    for name in c["presets"]:
        if name not in AUDIT_PRESETS:
            fail("carleman", "presets", f"[carleman] presets: unknown test function {name!r}")
    for side in c["sides"]:
        if side not in SIDES:
            fail("carleman", "sides", f"[carleman] sides: unknown side {side!r}")
    if len(c["omega"]) != 2 or abs(np.hypot(*c["omega"]) - 1.0) > 1e-12:
        fail("carleman", "omega", "[carleman] omega: must be a unit vector with two components")
    if c["rho_list"] and len(c["rho_list"]) < 2:
        fail("carleman", "rho_list", "[carleman] rho_list: give at least two values or leave empty")
    try:
        _anchors(cfg["quasilinear"]["anchors"])
    except ConfigError as exc:
        fail("quasilinear", "anchors", str(exc))
    for sec in ("coefficients.c1", "coefficients.c2"):
        if cfg[sec]["preset"] is None:
            fail(sec, "preset", f"[{sec}] preset: missing")


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, p.parent)


# ------------------------------------------------------------------ pipelines


@dataclass
class RunResult:
    summary: Dict[str, Any]
    passed: bool


def _grid(cfg: ExperimentConfig, factor: int = 1):
    from .grid import build_grid

    g = cfg["grid"]
    grid = build_grid(g["nx"], g["ny"], g["nt"], g["Lx"], g["Ly"], g["T"])
    return grid if factor == 1 else grid.refine(factor)


def _coefficients(cfg: ExperimentConfig, which: str, grid):
    from .presets import coefficient_preset

    sec = f"coefficients.{which}"
    return coefficient_preset(cfg[sec]["preset"], grid, **cfg.extras[sec])


def _pipeline_forward(cfg: ExperimentConfig, out: Path) -> RunResult:
    from .forward import solve_forward
    from .presets import affine_datum, lateral_bump_datum, random_boundary_datum
    from .report import write_csv

    grid = _grid(cfg)
    c = _coefficients(cfg, "c1", grid)
    d = cfg["data"]
    kind = d["kind"]
    if kind == "zero":
        g = np.zeros(grid.shape)
    elif kind == "affine":
        g = affine_datum(grid, (d["vx"], d["vy"]), d["offset"])
    elif kind == "lateral-bump":
        g = lateral_bump_datum(grid, d["t1"])
    else:
        g = random_boundary_datum(grid, np.random.default_rng(cfg["run"]["seed"]))
    u0 = g[0].copy() if kind == "affine" else None
    sol = solve_forward(c, g, u0=u0, theta=d["theta"])
    T, X, Y = grid.mesh3()
    write_csv(out / "solution.csv", ("t", "x", "y", "u"),
              zip(T.ravel(), X.ravel(), Y.ravel(), sol.values.ravel()))
    rows = []
    for edge, flux in sol.flux_trace.items():
        coords = grid.edge_coords(edge)
        for n, t in enumerate(grid.t):
            for k, s in enumerate(coords):
                rows.append((edge, t, s, flux[n, k]))
    write_csv(out / "flux.csv", ("edge", "t", "s", "flux"), rows)
    summary = {"max_abs_solution": float(np.max(np.abs(sol.values))), "diagnostics": sol.diagnostics}
    return RunResult(summary, True)


def _gauge_case(grid, c, gauge_seed: int, data_seed: int, modes: int, amplitude: float):
    from .dnmap import dn_pairing_difference
    from .fields import gauge_transform
    from .presets import random_boundary_datum, random_gauge

    phi = random_gauge(grid, np.random.default_rng(gauge_seed), modes, amplitude)
    rng = np.random.default_rng(data_seed)
    gp = random_boundary_datum(grid, rng, vanish_at="start")
    gm = random_boundary_datum(grid, rng, vanish_at="end")
    s = dn_pairing_difference(c, gauge_transform(c, phi), gp, gm)
    return s


def _pipeline_gauge(cfg: ExperimentConfig, out: Path) -> RunResult:
    from .report import write_csv

    gc = cfg["gauge"]
    seed = cfg["run"]["seed"]
    ss = np.random.SeedSequence(seed).spawn(2 * gc["cases"])
    seeds = [int(s.generate_state(1)[0]) for s in ss]
    levels = [1, 2] if gc["refine"] else [1]
    rows, cases = [], []
    ok = True
    for k in range(gc["cases"]):
        devs = []
        for lev in levels:
            grid = _grid(cfg, lev)
            c = _coefficients(cfg, "c1", grid)
            s = _gauge_case(grid, c, seeds[2 * k], seeds[2 * k + 1], gc["modes"], gc["amplitude"])
            dev = abs(s.value) / s.scale if s.scale > 0 else abs(s.value)
            devs.append(dev)
            rows.append((k, grid.nx, grid.ny, grid.nt, s.value.real, s.value.imag, s.scale, dev))
        case_ok = devs[0] <= gc["tolerance"]
        if gc["refine"]:
            case_ok = case_ok and devs[1] <= 0.5 * devs[0]
        ok = ok and case_ok
        cases.append({"case": k, "relative_deviation": devs, "pass": case_ok})
    write_csv(out / "gauge_pairings.csv",
              ("case", "nx", "ny", "nt", "re_value", "im_value", "scale", "relative_deviation"), rows)
    summary = {"cases": cases, "relative_deviation": max(c["relative_deviation"][0] for c in cases)}
    return RunResult(summary, ok)


def _non_increasing(vals: List[float]) -> bool:
    return all(b <= a * (1 + 1e-12) for a, b in zip(vals, vals[1:]))


def _pipeline_recover_da(cfg: ExperimentConfig, out: Path) -> RunResult:
    from .recover import recover_curl

    grid = _grid(cfg)
    c1, c2 = _coefficients(cfg, "c1", grid), _coefficients(cfg, "c2", grid)
    p = cfg["probe"]
    rep = recover_curl(c1, c2, p["rho_list"], p["K"], p["M"])
    rep.write_csv(out / "curl_fourier.csv")
    errs = [rep.error_by_rho[r] for r in sorted(rep.error_by_rho)]
    ok = rep.rel_error <= p["tolerance"] and _non_increasing(errs)
    summary = {
        "rel_error": rep.rel_error,
        "error_by_rho": {str(r): e for r, e in sorted(rep.error_by_rho.items())},
        "hermitian_deviation": rep.hermitian_deviation,
        "filled_zero_frequency": int(np.sum(rep.filled)),
    }
    return RunResult(summary, ok)


def _pipeline_recover_q(cfg: ExperimentConfig, out: Path) -> RunResult:
    from .recover import recover_zero_order

    grid = _grid(cfg)
    c1, c2 = _coefficients(cfg, "c1", grid), _coefficients(cfg, "c2", grid)
    p = cfg["probe"]
    rep = recover_zero_order(c1, c2, rho=p["rho"], K=p["K"], M=p["M"])
    rep.write_csv(out / "zero_order_fourier.csv")
    summary = {"rel_difference": rep.rel_difference, "max_abs_direct": float(np.max(np.abs(rep.direct)))}
    return RunResult(summary, rep.rel_difference <= p["tolerance"])


def _anchors(raw: str) -> List[Tuple[float, Tuple[float, float]]]:
    out = []
    for part in raw.split(";"):
        part = part.strip()
        if not part:
            continue
        try:
            a, v = part.split(":")
            vx, vy = (float(s) for s in v.split(","))
            out.append((float(a), (vx, vy)))
        except ValueError:
            raise ConfigError(f"[quasilinear] anchors: cannot parse {part!r}") from None
    if not out:
        raise ConfigError("[quasilinear] anchors: no anchor given")
    return out


def _pipeline_quasilinear(cfg: ExperimentConfig, out: Path) -> RunResult:
    from .report import write_csv

    grid = _grid(cfg)
    q = cfg["quasilinear"]
    if q["task"] == "frechet":
        from .forward import frechet_check
        from .presets import affine_datum, lateral_bump_datum, model_preset

        m = model_preset(q["model"])
        res = frechet_check(m, affine_datum(grid, (q["vx"], q["vy"])), lateral_bump_datum(grid), grid, q["epsilons"])
        write_csv(out / "frechet.csv", ("epsilon", "residual"), zip(res.epsilons, res.residuals))
        return RunResult({"slope": res.slope, "linear_branch": res.linear_branch, "residuals": res.residuals},
                         res.passed)

    from .presets import model_pair_gauge, model_pair_solenoidal
    from .recover import quasilinear_slice_recover

    anchors = _anchors(q["anchors"])
    if q["pair"] == "solenoidal":
        m1, m2 = model_pair_solenoidal(q["amplitude"])
    else:
        m1, m2, _ = model_pair_gauge(q["amplitude"])
    rep = quasilinear_slice_recover(m1, m2, anchors, grid, q["rho_list"], q["K"], v0=q["v0"])
    X, Y = grid.mesh()
    rows = []
    for (a, v) in rep.anchors:
        key = (a, v[0], v[1])
        r, t = rep.recovered_dv[key], rep.true_dv[key]
        for i in range(grid.nx + 2):
            for j in range(grid.ny + 2):
                rows.append((a, v[0], v[1], X[i, j], Y[i, j], r[0, i, j], r[1, i, j], t[0, i, j], t[1, i, j]))
    write_csv(out / "quasilinear_slice.csv",
              ("a", "v_x", "v_y", "x", "y", "rec_x", "rec_y", "true_x", "true_y"), rows)
    summary = {"rel_error": rep.rel_error, "hypotheses": rep.hypotheses, "gauge_class": rep.gauge_class,
               "F_rel_error": rep.F_rel_error}
    ok = True if rep.gauge_class else rep.rel_error <= q["tolerance"]
    if rep.F_rel_error is not None:
        ok = ok and rep.F_rel_error <= q["tolerance"]
    return RunResult(summary, ok)


def _pipeline_carleman(cfg: ExperimentConfig, out: Path) -> RunResult:
    from .carleman import (AUDIT_COLUMNS, WeightParams, audit_preset, conjugated_apply, estimate_audit,
                           sample_expr, threshold_decade)
    from .grid import build_grid
    from .report import write_csv

    c = cfg["carleman"]
    g = cfg["grid"]
    Lx, Ly, T = g["Lx"], g["Ly"], g["T"]
    rows, groups, ok = [], [], True
    for s in c["s_list"]:
        rhos = c["rho_list"] or list(threshold_decade(s, c["points"], Lx, Ly))
        for side in c["sides"]:
            a = estimate_audit([s], rhos, c["presets"], side, tuple(c["omega"]), Lx, Ly, T, nodes=c["nodes"])
            rows.extend(r.as_tuple() for r in a.rows)
            for (preset, sd, sv), spread in a.spread.items():
                groups.append({"preset": preset, "side": sd, "s": sv, "spread": spread,
                               "pass": bool(np.isnan(spread) or spread <= 3.0)})
            ok = ok and a.passed
    write_csv(out / "carleman_audit.csv", AUDIT_COLUMNS, rows)
    gaps = []
    p = WeightParams.default(1.5, 2.0, tuple(c["omega"]), Lx, Ly)
    for n in (c["check_n"], 2 * c["check_n"] + 1):
        grid = build_grid(n, n, 2 * (n + 1), Lx, Ly, T)
        for name in c["presets"]:
            for side in c["sides"]:
                v = sample_expr(audit_preset(name, side, T, Lx, Ly), grid)
                gaps.append((name, side, n, conjugated_apply(p, (0.5, -0.3), v, grid, side).sum_gap()))
    write_csv(out / "carleman_sum_check.csv", ("preset", "side", "n", "max_gap"), gaps)
    half = len(gaps) // 2
    shrink = all(fine[3] < coarse[3] for coarse, fine in zip(gaps[:half], gaps[half:]))
    return RunResult({"groups": groups, "sum_check_shrinks": shrink}, ok and shrink)


def _pipeline_mollifier(cfg: ExperimentConfig, out: Path) -> RunResult:
    from .fields import mollifier_norm_audit
    from .report import write_csv

    grid = _grid(cfg)
    c = _coefficients(cfg, "c1", grid)
    a = mollifier_norm_audit(c.A, grid, cfg["mollifier"]["rho_list"])
    write_csv(out / "mollifier_audit.csv", ("rho", "W0", "W1", "W2", "l1_error"),
              [(r["rho"], r["W0"], r["W1"], r["W2"], r["l1_error"]) for r in a.rows])
    l1 = a.l1_errors
    decreasing = all(b < a_ for a_, b in zip(l1, l1[1:]))
    return RunResult({"slopes": {str(k): v for k, v in a.slopes.items()}, "l1_errors": l1,
                      "l1_strictly_decreasing": decreasing}, a.passed and decreasing)


PIPELINE_FUNCS: Dict[str, Callable[[ExperimentConfig, Path], RunResult]] = {
    "forward": _pipeline_forward,
    "gauge-check": _pipeline_gauge,
    "recover-da": _pipeline_recover_da,
    "recover-q": _pipeline_recover_q,
    "quasilinear": _pipeline_quasilinear,
    "carleman-audit": _pipeline_carleman,
    "moll-audit": _pipeline_mollifier,
}


def run(cfg: ExperimentConfig) -> RunResult:
    """Execute the configured pipeline and write ``summary.json`` plus its CSV tables."""
    from .report import write_json

    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    res = PIPELINE_FUNCS[cfg.pipeline](cfg, out)
    summary = {"pipeline": cfg.pipeline, "pass": bool(res.passed), "config": cfg.as_dict(), "results": res.summary}
    write_json(out / "summary.json", summary)
    return RunResult(summary, res.passed)


# ------------------------------------------------------------------ entry point


def presets_listing() -> str:
    from .carleman import AUDIT_PRESETS
    from .presets import COEFFICIENT_PRESETS, MODEL_PRESETS

    lines = ["coefficient presets:"] + [f"  {k}" for k in COEFFICIENT_PRESETS]
    lines += ["quasi-linear models:"] + [f"  {k}" for k in MODEL_PRESETS]
    lines += ["quasi-linear pairs:", "  solenoidal", "  gauge"]
    lines += ["audit test functions:"] + [f"  {k}" for k in AUDIT_PRESETS]
    lines += ["pipelines:"] + [f"  {k}" for k in PIPELINES]
    return "\n".join(lines)


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dnprobe", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the pipeline of a config file")
    r.add_argument("config")
    p = sub.add_parser("presets", help="list registered presets")
    p.add_argument("action", choices=["list"])
    s = sub.add_parser("schema", help="print the config schema")
    s.add_argument("action", choices=["print"])
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.command == "presets":
        print(presets_listing())
        return EXIT_OK
    if args.command == "schema":
        sys.stdout.write(schema_text())
        return EXIT_OK
    try:
        cfg = load_config(args.config)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        res = run(cfg)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DNProbeError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    print(f"{cfg.pipeline}: {'PASS' if res.passed else 'FAIL'} -> {cfg.output_dir / 'summary.json'}")
    return EXIT_OK if res.passed else EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
