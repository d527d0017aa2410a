"""Command-line front end: maps, tuning, decay bounds, simulation and the acceptance checks.

Parameters resolve in three layers, later ones winning: built-in defaults
(a = b = 1, h1 = h2 = 0.05), a ``key = value`` config file, then flags.
Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 failed checks.
"""
from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

from . import __version__, boundaries, tuning, verify
from .errors import NumericalError, ValidationError
from .model import MODES, NONE, Gains, LoopConfig
from .quasipoly import count_roots_in_rect, loop_quasipolynomial, rightmost_root
from .sim import SimConfig, estimate_decay, simulate
from .svg import render_map

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3

DEFAULTS = {"a": 1.0, "b": 1.0, "h1": 0.05, "h2": 0.05, "mode": NONE}

FLOAT_KEYS = {"a", "b", "h", "h1", "h2", "d", "sigma", "kp", "ki", "x0", "xi0", "yref", "dt",
              "t_end", "box_factor"}
INT_KEYS = {"resolution", "workers", "probes", "seed"}
LIST_KEYS = {"sigmas", "kp_range", "ki_range", "window"}


class InputError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INPUT)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise InputError(f"expected comma-separated numbers, got {text!r}") from None


def _convert(key: str, value):
    if value is None:
        return None
    if key in FLOAT_KEYS:
        try:
            return float(value)
        except ValueError:
            raise InputError(f"{key}: expected a number, got {value!r}") from None
    if key in INT_KEYS:
        try:
            return int(value)
        except ValueError:
            raise InputError(f"{key}: expected an integer, got {value!r}") from None
    if key in LIST_KEYS:
        return value if isinstance(value, list) else _floats(value)
    if key == "zeta":
        return value if value == "min" else _convert("d", value)
    return value


def read_config(path) -> dict:
    """Parse a ``key = value`` file; ``#`` starts a comment, dashes in keys become underscores."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{n}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key.replace("-", "_").lower()] = _convert(key.replace("-", "_").lower(), value)
    return out


def _layer(params: dict, layer: dict):
    layer = {k: v for k, v in layer.items() if v is not None}
    if "h" in layer and not ("h1" in layer or "h2" in layer):
        layer["h1"] = layer["h2"] = layer["h"] / 2
    layer.pop("h", None)
    params.update(layer)


def resolve(args) -> dict:
    """Merge defaults, config file and flags into one parameter dictionary."""
    params = dict(DEFAULTS)
    if getattr(args, "config", None):
        _layer(params, read_config(args.config))
    flags = {k: _convert(k, v) for k, v in vars(args).items()
             if k not in ("command", "config", "func")}
    _layer(params, flags)
    if params.get("zeta") == "min":
        params["zeta"] = tuning.universal_constants().zeta_min
    return params


def loop_from(params) -> LoopConfig:
    mode = params.get("mode", NONE)
    if mode not in MODES:
        raise InputError(f"mode must be one of {', '.join(MODES)}")
    kw = {}
    if mode == "fixed-d":
        kw["d"] = params.get("d")
    elif mode == "zeta":
        kw["zeta"] = params.get("zeta")
    return LoopConfig.make(params["a"], params["b"], mode=mode, h1=params["h1"],
                           h2=params["h2"], **kw)


# -- output helpers ---------------------------------------------------------


def fmt(v) -> str:
    """Shortest round-trip text for floats; plain text for the rest."""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float) or hasattr(v, "dtype"):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


# where and how fast a result was produced does not change it
UNRECORDED = {"out_dir", "workers"}


def manifest_lines(command: str, params: dict) -> list[str]:
    lines = ["# manifest:", f"#   command = {command}", f"#   version = {__version__}"]
    for k in sorted(set(params) - UNRECORDED):
        v = params[k]
        text = ",".join(fmt(float(x)) for x in v) if isinstance(v, (list, tuple)) else fmt(v)
        lines.append(f"#   {k} = {text}")
    return lines


def write_csv(path: Path, command: str, params: dict, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(manifest_lines(command, params)) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def print_table(pairs, stream=None):
    stream = stream or sys.stdout
    width = max(len(k) for k, _ in pairs)
    for k, v in pairs:
        text = fmt(v) if not isinstance(v, str) else v
        print(f"{k:<{width}}  {text}", file=stream)


# -- commands ---------------------------------------------------------------


def _ranges(params, cfg, sigmas):
    kr, ir = params.get("kp_range"), params.get("ki_range")
    if kr is None or ir is None:
        akr, air = tuning.gain_box(cfg, sigmas, factor=params.get("box_factor", 3.5))
        kr = kr or list(akr)
        ir = ir or list(air)
    for name, r in (("kp_range", kr), ("ki_range", ir)):
        if len(r) != 2 or not r[1] > r[0]:
            raise InputError(f"{name} must be 'lo,hi' with hi > lo")
    params["kp_range"], params["ki_range"] = list(map(float, kr)), list(map(float, ir))
    return tuple(params["kp_range"]), tuple(params["ki_range"])


def cmd_map(params) -> int:
    cfg = loop_from(params)
    sigmas = params.get("sigmas") or [0.0]
    params["sigmas"] = sigmas
    kr, ir = _ranges(params, cfg, sigmas)
    params.setdefault("resolution", 32)
    params.setdefault("probes", 2)
    params.setdefault("seed", 0)
    params.setdefault("format", "csv")
    out = Path(params.setdefault("out_dir", "."))
    maps = []
    for s in sigmas:
        m = boundaries.build_sigma_map(cfg, s, kr, ir, params["resolution"],
                                       probes=params["probes"], seed=params["seed"],
                                       workers=params.get("workers"))
        maps.append(m)
        print(f"sigma={fmt(float(s))}: {int(m.d_sigma.sum())} region cells, "
              f"{len(m.curves)} curves, {sum(len(c) for c in m.curves)} boundary samples")
    brows, rrows = [], []
    for m in maps:
        for cid, c in enumerate(m.curves):
            for kp, ki, w in c.samples:
                brows.append((m.sigma, c.kind, float(w), float(kp), float(ki), cid, c.branch))
        for i, kp in enumerate(m.kp_centers):
            for j, ki in enumerate(m.ki_centers):
                c = int(m.counts[i, j])
                rrows.append((m.sigma, float(kp), float(ki), c, c != boundaries.INFEASIBLE,
                              bool(m.mixed[i, j])))
    write_csv(out / "boundaries.csv", "map", params,
              ("sigma", "kind", "omega", "kp", "ki", "curve", "branch"), brows)
    write_csv(out / "regions.csv", "map", params,
              ("sigma", "kp", "ki", "root_count", "feasible", "mixed"), rrows)
    written = ["boundaries.csv", "regions.csv"]
    if params["format"] == "svg":
        (out / "map.svg").write_text(render_map(maps, kr, ir, title=cfg.scattering.describe()))
        written.append("map.svg")
    print(f"wrote {', '.join(str(out / f) for f in written)}")
    return EXIT_OK


def _result_rows(cfg: LoopConfig, res: tuning.TuningResult):
    diag = res.diagnostics
    rows = [("mode", cfg.mode), ("scattering", res.scattering.describe()),
            ("sigma", float(res.sigma)), ("sigma_star", float(res.sigma_star)),
            ("kp", res.gains.kp), ("ki", res.gains.ki), ("feasible", str(res.feasible)),
            ("certified", str(res.certified)),
            ("diff_op_margin", "" if res.diff_op_margin is None else fmt(res.diff_op_margin))]
    for k in ("p", "dp", "d2p", "p0", "row1", "row2", "row3"):
        if k in diag:
            rows.append((f"residual_{k}" if k != "p0" else "abs_p0", float(diag[k])))
    return rows


def cmd_tune(params) -> int:
    out = Path(params.setdefault("out_dir", "."))
    if params.get("procedure"):
        if params.get("sigma") is None:
            raise InputError("--procedure needs --sigma")
        h = params["h1"] + params["h2"]
        design = tuning.design_procedure(params["a"], params["b"], h, params["sigma"])
        cfg = LoopConfig.make(params["a"], params["b"], h1=params["h1"], h2=params["h2"],
                              mode="zeta", zeta=design.scattering.zeta)
        rows = [("zeta", design.scattering.zeta),
                ("sigma_sup", tuning.sigma_sup(h))] + _result_rows(cfg, design.result)
    else:
        cfg = loop_from(params)
        sigma = params.get("sigma")
        if sigma is None:
            if cfg.mode == "zeta":
                raise InputError("proportional scattering has no attained maximum; pass --sigma")
            sigma = tuning.maximal_decay(cfg)
            params["sigma"] = sigma
        res = tuning.tune(cfg, sigma, certify_result=not params.get("no_certify"))
        rows = _result_rows(cfg, res)
    print_table(rows)
    write_csv(out / "tuning.csv", "tune", params, [k for k, _ in rows],
              [[v for _, v in rows]])
    return EXIT_OK


def cmd_sigma_star(params) -> int:
    cfg = loop_from(params)
    h = cfg.h
    rows = [("mode", cfg.mode), ("h", h)]
    if cfg.mode == NONE:
        star = tuning.sigma_star_no_scatter(cfg.a, h)
        g = tuning.minimal_gains_no_scatter(cfg.a, cfg.b, h, star)
        rows += [("sigma_star", star), ("kp", g.kp), ("ki", g.ki)]
    elif cfg.mode == "fixed-d":
        res = tuning.sigma_star_fixed_d(cfg.a, cfg.b, h, cfg.scattering.d,
                                        certify_result=not params.get("no_certify"))
        rows += [("sigma_star", res.sigma_star), ("kp", res.gains.kp), ("ki", res.gains.ki),
                 ("diff_op_margin", res.diff_op_margin), ("certified", str(res.certified))]
    else:
        star = tuning.sigma_star_zeta(cfg.scattering.zeta, h)
        rows += [("zeta", cfg.scattering.zeta), ("sigma_star", star),
                 ("sigma_sup", tuning.sigma_sup(h))]
        for k, (r, label) in enumerate(tuning.zeta_branch_roots(cfg.scattering.zeta, h)):
            rows.append((f"branch_root_{k}", f"{fmt(r)} ({label})"))
    print_table(rows)
    return EXIT_OK


def cmd_constants(params) -> int:
    c = tuning.universal_constants()
    h = params["h1"] + params["h2"]
    rows = [("eta_sup", c.eta_sup), ("zeta_min", c.zeta_min)]
    if h > 0:
        rows += [("h", h), ("sigma_sup", tuning.sigma_sup(h))]
    print_table(rows)
    return EXIT_OK


def dominant_multiplicity(q, root, rel=0.02) -> int:
    """Number of roots clustered within ``rel * (|root| + 1)`` of ``root``."""
    r = rel * (abs(root) + 1.0)
    try:
        n = count_roots_in_rect(q, root.real - r, root.real + r, root.imag - r, root.imag + r)
    except NumericalError:
        return 1
    return max(1, n)


def cmd_simulate(params) -> int:
    cfg = loop_from(params)
    out = Path(params.setdefault("out_dir", "."))
    if params.get("auto_tune"):
        if params.get("sigma") is None:
            raise InputError("--auto-tune needs --sigma")
        gains = tuning.tune(cfg, params["sigma"]).gains
        params["kp"], params["ki"] = gains.kp, gains.ki
    else:
        if params.get("kp") is None or params.get("ki") is None:
            raise InputError("pass --kp and --ki, or --auto-tune with --sigma")
        gains = Gains(params["kp"], params["ki"])
    # start away from rest so that a free response is visible
    params.setdefault("x0", 1.0)
    sc = SimConfig(cfg, gains, y_ref=params.get("yref", 0.0), x0=params["x0"],
                   xi0=params.get("xi0", 0.0), dt=params.get("dt"), t_end=params.get("t_end"))
    params["dt"], params["t_end"] = sc.dt, sc.t_end
    mult = params.get("multiplicity", "auto")
    q = loop_quasipolynomial(cfg, gains.kp, gains.ki)
    root = None
    if mult == "auto":
        mult = 1
        try:
            root = rightmost_root(q, sigma=_search_depth(cfg, gains))
            if root is not None:
                mult = dominant_multiplicity(q, root)
        except NumericalError:
            root = None
    else:
        try:
            mult = int(mult)
        except ValueError:
            raise InputError("--multiplicity must be a positive integer or 'auto'") from None
    params["multiplicity"] = mult
    trace = simulate(sc)
    window = params.get("window")
    try:
        est, r2 = estimate_decay(trace, tuple(window) if window else None, multiplicity=mult)
    except NumericalError as exc:
        est, r2 = math.nan, 0.0
        print(f"decay fit unavailable: {exc}", file=sys.stderr)
    cols = trace.columns()
    names = list(cols)
    rows = zip(*(cols[n] for n in names))
    write_csv(out / "trace.csv", "simulate", params, names, rows)
    table = [("kp", gains.kp), ("ki", gains.ki), ("sigma_hat", est), ("fit_r2", r2),
             ("multiplicity", str(mult)), ("y1_final", float(trace.y1[-1]))]
    if root is not None:
        table.insert(4, ("rightmost_root_real", root.real))
    print_table(table)
    print(f"wrote {out / 'trace.csv'}")
    return EXIT_OK


def _search_depth(cfg, gains):
    """Left edge (as a decay rate) of the window searched for the dominant root.

    With scattering the window must stop short of the neutral root chain.
    """
    depth = min(abs(cfg.a) + cfg.b * (gains.kp + gains.ki) + 1.0, 200.0)
    if cfg.scattering.active and cfg.h > 0:
        d = cfg.scattering.d_for(gains.kp)
        if d != gains.kp:
            chain = math.log(abs((gains.kp + d) / (gains.kp - d))) / cfg.h
            depth = min(depth, 0.95 * chain)
    return depth


def cmd_verify(params) -> int:
    results = verify.run(params.get("filter"), sys.stdout)
    if not results:
        print("no checks matched the filter", file=sys.stderr)
        return EXIT_INPUT
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


# -- argument parsing -------------------------------------------------------


def _loop_args(p):
    g = p.add_argument_group("loop")
    g.add_argument("--config", help="key = value file; flags override it")
    g.add_argument("--mode", choices=MODES)
    g.add_argument("--a", help="plant pole parameter (default 1)")
    g.add_argument("--b", help="plant input gain (default 1)")
    g.add_argument("--h", help="round-trip delay, split evenly (default 0.1)")
    g.add_argument("--h1", help="forward delay")
    g.add_argument("--h2", help="return delay")
    g.add_argument("--d", help="impedance for --mode fixed-d")
    g.add_argument("--zeta", help="d/kp ratio for --mode zeta ('min' for the optimal ratio)")


def build_parser() -> argparse.ArgumentParser:
    parser = Parser(prog="sigmastab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("map", help="sigma-stability regions and boundary curves")
    _loop_args(p)
    p.add_argument("--sigmas", help="comma-separated abscissas (default 0)")
    p.add_argument("--kp-range", help="lo,hi (default: scaled from the minimal gains)")
    p.add_argument("--ki-range", help="lo,hi")
    p.add_argument("--box-factor", help="automatic box size in multiples of the minimal gains")
    p.add_argument("--resolution", help="cells per axis (default 32)")
    p.add_argument("--probes", help="random probes per cell besides the centre (default 2)")
    p.add_argument("--seed", help="probe seed (default 0)")
    p.add_argument("--workers", help="processes for cell classification")
    p.add_argument("--format", choices=("csv", "svg"), help="svg also writes map.svg")
    p.add_argument("--out-dir", help="output directory (default .)")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("tune", help="minimal gains for a decay rate")
    _loop_args(p)
    p.add_argument("--sigma", help="decay rate (default: the maximal one, where attained)")
    p.add_argument("--procedure", action="store_true", default=None,
                   help="scattering with the optimal ratio and its minimal gains")
    p.add_argument("--no-certify", action="store_true", default=None,
                   help="skip the root-counting certificate")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("sigma-star", help="maximal achievable decay rate")
    _loop_args(p)
    p.add_argument("--no-certify", action="store_true", default=None)
    p.set_defaults(func=cmd_sigma_star)

    p = sub.add_parser("constants", help="delay-only decay limit and optimal impedance ratio")
    _loop_args(p)
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("simulate", help="time response and empirical decay rate")
    _loop_args(p)
    p.add_argument("--kp")
    p.add_argument("--ki")
    p.add_argument("--sigma", help="decay rate used by --auto-tune")
    p.add_argument("--auto-tune", action="store_true", default=None,
                   help="use the minimal gains for --sigma")
    p.add_argument("--x0", help="initial plant state (default 1)")
    p.add_argument("--xi0", help="initial integrator state")
    p.add_argument("--yref", help="reference level")
    p.add_argument("--dt", help="step (default h/200)")
    p.add_argument("--t-end", help="duration (default max(10 h, 10))")
    p.add_argument("--window", help="t0,t1 for the decay fit")
    p.add_argument("--multiplicity",
                   help="dominant root multiplicity for the fit, or 'auto' (default)")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="run the acceptance checks")
    p.add_argument("--filter", action="append",
                   help="substring of a check name or tag; repeatable")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "verify":
            return args.func({"filter": args.filter})
        params = resolve(args)
        return args.func(params)
    except (InputError, ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
