"""Command-line front end: config parsing, experiment dispatch, CSV/SVG
emission.

Config files are a flat key = value format with optional [alpha] / [mu]
sections for custom piecewise power-law kernels:

    # lines starting with '#' are comments
    experiment = nt-check
    domain = ball            # ball | box | ellipse | lshape
    dimension = 2
    radius = 1.0
    family = localizing      # localizing | fractional | custom
    field = identity         # identity | constant | rotation | gaussian-gradient
    eps_grid = 0.4 0.2 0.1
    seed = 0

    [mu]
    piece = 0 1 1.0 -1.5     # r_lo r_hi coefficient exponent

Unknown keys, unknown registry names, and out-of-range values are rejected
with the offending line number.  Exit codes: 0 all assertions passed, 1 an
assertion failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .experiments import (
    ExperimentReport,
    KernelValidationError,
    run_approx_identity,
    run_dc,
    run_nc,
    run_nt_check,
    run_fractional_suite,
)
from .fields import (
    constant_field,
    gaussian_gradient_field,
    identity_field,
    rotation_field,
)
from .geometry import make_ball, make_box, make_ellipse, make_lshape
from .kernels import (
    check_admissible,
    levy_integral,
    make_custom_family,
    make_fractional_family,
    make_localizing_family,
    tail_mass,
)
from .quadrature import QuadSpec

EXPERIMENTS = ("check-kernel", "nt-check", "converge-dc", "converge-nc",
               "approx-identity", "frac-suite", "perimeter", "curvature")
SHAPES = ("ball", "box", "ellipse", "lshape")
FIELDS = ("identity", "constant", "rotation", "gaussian-gradient")
FAMILIES = ("localizing", "fractional", "custom")

THREADS_ENV = "NLCALC_THREADS"


class ConfigError(Exception):
    """Configuration problem; carries (line, message) diagnostics."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(f"line {ln}: {msg}" for ln, msg in self.diagnostics))


@dataclass
class Config:
    experiment: str = ""
    domain: str = "ball"
    dimension: int = 2
    radius: float = 1.0
    half_widths: tuple = (1.0, 1.0)
    ellipse_axes: tuple = (1.5, 1.0)
    family: str = "localizing"
    field_name: str = "identity"
    margin: float = 1.0
    eps_grid: tuple = (0.4, 0.2, 0.1, 0.05)
    s_grid: tuple = (0.3, 0.5, 0.7, 0.9, 0.95)
    p_grid: tuple = (2.0, 3.0)
    eps_moll_grid: tuple = (0.2, 0.1, 0.05)
    delta: float = 0.1
    seed: int = 0
    threads: int = 0
    rel_tol: float = 1e-5
    abs_tol: float = 1e-7
    max_evals: int = 500_000
    method: str = "tensor-adaptive"
    out: str = "."
    out_format: str = "csv"
    alpha_pieces: list = field(default_factory=list)
    mu_pieces: list = field(default_factory=list)

    def quad_spec(self) -> QuadSpec:
        return QuadSpec(method=self.method, rel_tol=self.rel_tol,
                        abs_tol=self.abs_tol, max_evals=self.max_evals,
                        seed=self.seed)

    def make_domain(self):
        if self.domain == "ball":
            return make_ball(self.dimension, radius=self.radius)
        if self.domain == "box":
            return make_box(self.dimension, self.half_widths[: self.dimension])
        if self.domain == "ellipse":
            return make_ellipse(*self.ellipse_axes)
        if self.domain == "lshape":
            return make_lshape()
        raise ConfigError([(0, f"unknown shape {self.domain!r}; registry: "
                            + ", ".join(SHAPES))])

    def make_family(self):
        if self.family == "localizing":
            return make_localizing_family(self.dimension)
        if self.family == "fractional":
            return make_fractional_family(self.dimension)
        if self.family == "custom":
            if not self.alpha_pieces or not self.mu_pieces:
                raise ConfigError([(0, "custom family needs [alpha] and [mu] "
                                    "piece lines")])
            return make_custom_family(self.dimension, self.alpha_pieces,
                                      self.mu_pieces)
        raise ConfigError([(0, f"unknown family {self.family!r}; registry: "
                            + ", ".join(FAMILIES))])

    def make_field(self):
        d = self.dimension
        if self.field_name == "identity":
            return identity_field(d)
        if self.field_name == "constant":
            return constant_field(np.ones(d))
        if self.field_name == "rotation":
            if d != 2:
                raise ConfigError([(0, "rotation field is 2-D only")])
            return rotation_field()
        if self.field_name == "gaussian-gradient":
            return gaussian_gradient_field(d)
        raise ConfigError([(0, f"unknown field {self.field_name!r}; registry: "
                            + ", ".join(FIELDS))])


_KEY_TYPES = {
    "experiment": str, "domain": str, "family": str, "field": str,
    "method": str, "out": str, "format": str,
    "dimension": int, "seed": int, "threads": int, "max_evals": int,
    "radius": float, "margin": float, "delta": float,
    "rel_tol": float, "abs_tol": float,
    "half_widths": "floats", "ellipse_axes": "floats",
    "eps_grid": "floats", "s_grid": "floats", "p_grid": "floats",
    "eps_moll_grid": "floats",
}

_KEY_ATTR = {"field": "field_name", "format": "out_format"}


def _parse_floats(text):
    return tuple(float(tok) for tok in text.replace(",", " ").split())


def parse_config(text: str) -> Config:
    """Parse the documented key=value/section format; raises ConfigError
    with line-numbered diagnostics."""
    cfg = Config()
    diagnostics = []
    section = None
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in ("alpha", "mu"):
                diagnostics.append((ln, f"unknown section [{section}]"))
                section = None
            continue
        if "=" not in line:
            diagnostics.append((ln, "expected key = value"))
            continue
        key, _, val = line.partition("=")
        key = key.strip().lower()
        val = val.strip()
        if section in ("alpha", "mu"):
            if key != "piece":
                diagnostics.append((ln, f"unknown key {key!r} in [{section}]"))
                continue
            try:
                lo, hi, coef, expo = val.replace("inf", str(math.inf)).split()
                piece = (float(lo), float(hi), float(coef), float(expo))
            except ValueError:
                diagnostics.append((ln, "piece needs: r_lo r_hi coefficient exponent"))
                continue
            (cfg.alpha_pieces if section == "alpha" else cfg.mu_pieces).append(piece)
            continue
        if key not in _KEY_TYPES:
            diagnostics.append((ln, f"unknown key {key!r}"))
            continue
        typ = _KEY_TYPES[key]
        attr = _KEY_ATTR.get(key, key)
        try:
            if typ == "floats":
                setattr(cfg, attr, _parse_floats(val))
            else:
                setattr(cfg, attr, typ(val))
        except ValueError:
            diagnostics.append((ln, f"cannot parse value {val!r} for {key}"))
            continue
        # range validation with the offending line at hand
        if key == "dimension" and cfg.dimension not in (1, 2, 3):
            diagnostics.append((ln, "dimension must be 1, 2, or 3"))
        if key == "experiment" and cfg.experiment not in EXPERIMENTS:
            diagnostics.append((ln, f"unknown experiment {cfg.experiment!r}; "
                                "known: " + ", ".join(EXPERIMENTS)))
        if key == "domain" and cfg.domain not in SHAPES:
            diagnostics.append((ln, f"unknown shape {cfg.domain!r}; known: "
                                + ", ".join(SHAPES)))
        if key == "field" and cfg.field_name not in FIELDS:
            diagnostics.append((ln, f"unknown field {cfg.field_name!r}; known: "
                                + ", ".join(FIELDS)))
        if key == "family" and cfg.family not in FAMILIES:
            diagnostics.append((ln, f"unknown family {cfg.family!r}; known: "
                                + ", ".join(FAMILIES)))
        if key == "s_grid" and any(not (0.0 < s < 1.0) for s in cfg.s_grid):
            diagnostics.append((ln, "every s must lie in (0, 1)"))
        if key == "eps_grid" and any(not (0.0 < e < 1.0) for e in cfg.eps_grid):
            diagnostics.append((ln, "every eps must lie in (0, 1)"))
        if key == "p_grid" and any(p < 1.0 for p in cfg.p_grid):
            diagnostics.append((ln, "every p must be at least 1"))
        if key == "format" and cfg.out_format not in ("csv", "csv+svg"):
            diagnostics.append((ln, "format must be csv or csv+svg"))
    if diagnostics:
        raise ConfigError(diagnostics)
    return cfg


# ---------------------------------------------------------------------------
# emission


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def emit_csv(report: ExperimentReport, path: str) -> None:
    """Write the report as CSV: the documented 8 columns, then any extras.

    Byte-deterministic for a given report (floats via repr); refuses an
    empty report and creates no file in that case.
    """
    if not report.params:
        raise ValueError("refusing to write an empty report")
    extra_keys = sorted(report.extras.keys())
    header = ["param", "value", "reference", "abs_err", "rel_err", "err_est",
              "n_evals", "seed"] + extra_keys
    abs_e = report.abs_errors()
    rel_e = report.rel_errors()
    lines = [",".join(header)]
    for i in range(len(report.params)):
        row = [
            _fmt(report.params[i]), _fmt(report.values[i]),
            _fmt(report.references[i]), _fmt(abs_e[i]), _fmt(rel_e[i]),
            _fmt(report.err_estimates[i]), _fmt(report.n_evals[i]),
            _fmt(report.seed),
        ] + [_fmt(report.extras[k][i]) for k in extra_keys]
        lines.append(",".join(row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def emit_svg(report: ExperimentReport, path: str) -> None:
    """Log-log chart of absolute error against the parameter; the same
    report always produces identical bytes."""
    if not report.params:
        raise ValueError("refusing to plot an empty report")
    W, H, pad = 480, 360, 48
    xs = [float(p) for p in report.params]
    ys = report.abs_errors()
    floor = 1e-16
    lx = [math.log10(max(abs(v), floor)) for v in xs]
    ly = [math.log10(max(abs(v), floor)) for v in ys]

    def scale(vals, lo_px, hi_px):
        vmin, vmax = min(vals), max(vals)
        if vmax - vmin < 1e-12:
            vmin, vmax = vmin - 1.0, vmax + 1.0
        return [lo_px + (v - vmin) / (vmax - vmin) * (hi_px - lo_px) for v in vals]

    px = scale(lx, pad, W - pad)
    py = scale(ly, H - pad, pad)
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(px, py))
    marks = "".join(
        f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="#b33"/>' for x, y in zip(px, py))
    svg = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}">'
        f'<rect width="{W}" height="{H}" fill="white"/>'
        f'<line x1="{pad}" y1="{H - pad}" x2="{W - pad}" y2="{H - pad}" stroke="black"/>'
        f'<line x1="{pad}" y1="{H - pad}" x2="{pad}" y2="{pad}" stroke="black"/>'
        f'<text x="{W // 2}" y="{H - 12}" text-anchor="middle" font-size="12">'
        f'log10 {report.param_name}</text>'
        f'<text x="14" y="{H // 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {H // 2})">log10 abs_err</text>'
        f'<text x="{W // 2}" y="20" text-anchor="middle" font-size="13">'
        f'{report.experiment}</text>'
        f'<polyline points="{pts}" fill="none" stroke="#36c" stroke-width="1.5"/>'
        f"{marks}</svg>\n"
    )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(svg)


# ---------------------------------------------------------------------------
# experiment dispatch


def _run_check_kernel(cfg: Config) -> list:
    fam = cfg.make_family()
    params, values, errs, nev = [], [], [], []
    tails, passes = [], []
    for eps in cfg.eps_grid:
        pair = fam.pair_at(eps)
        res = levy_integral(pair, tol=1e-9)
        rep = check_admissible(pair)
        params.append(eps)
        values.append(res.value)
        errs.append(res.error_estimate)
        nev.append(res.n_evals)
        tails.append(tail_mass(pair, 1.0))
        passes.append(1.0 if rep.passes else 0.0)
    report = ExperimentReport(
        "check-kernel", "eps", params, values,
        [float(cfg.dimension)] * len(params), errs, nev, cfg.seed,
        extras={"tail_mass_at_1": tails, "admissible": passes})
    for eps, v, ok in zip(params, values, passes):
        report.check(f"normalized-eps-{eps}", abs(v - cfg.dimension) <= 1e-6,
                     f"integral {v!r}")
        report.check(f"admissible-eps-{eps}", ok == 1.0, "admissibility report")
    return [("kernel", report)]


def run_experiment(cfg: Config) -> list:
    """Dispatch; returns [(name, report), ...]."""
    spec = cfg.quad_spec()
    threads = cfg.threads if cfg.threads > 0 else \
        int(os.environ.get(THREADS_ENV, "0")) or 1
    if cfg.experiment == "check-kernel":
        return _run_check_kernel(cfg)
    if cfg.experiment == "approx-identity":
        return [("approx-identity",
                 run_approx_identity(cfg.dimension, cfg.eps_grid))]
    dom = cfg.make_domain()
    if cfg.experiment in ("nt-check", "converge-dc", "converge-nc"):
        fam = cfg.make_family()
        F = cfg.make_field()
        runner = {"nt-check": run_nt_check, "converge-dc": run_dc,
                  "converge-nc": run_nc}[cfg.experiment]
        kwargs = dict(margin=cfg.margin, threads=threads)
        if cfg.experiment == "converge-nc":
            kwargs["delta"] = cfg.delta
        rep = runner(dom, fam, F, cfg.eps_grid, spec, **kwargs)
        return [(cfg.experiment, rep)]
    if cfg.experiment == "frac-suite":
        reports = run_fractional_suite(dom, cfg.s_grid, cfg.p_grid, spec,
                                       eps_moll_list=cfg.eps_moll_grid,
                                       threads=threads)
        return sorted(reports.items())
    if cfg.experiment == "perimeter":
        reports = run_fractional_suite(dom, cfg.s_grid, (), spec,
                                       eps_moll_list=cfg.eps_moll_grid,
                                       threads=threads)
        return [(k, v) for k, v in sorted(reports.items())
                if k in ("perimeter", "scaling", "maximizer")]
    if cfg.experiment == "curvature":
        reports = run_fractional_suite(dom, cfg.s_grid, (), spec,
                                       eps_moll_list=cfg.eps_moll_grid,
                                       threads=threads)
        return [("curvature", reports["curvature"])]
    raise ConfigError([(0, f"unknown experiment {cfg.experiment!r}; known: "
                        + ", ".join(EXPERIMENTS))])


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nlcalc",
        description="Nonlocal vector calculus experiments.",
        epilog=("experiments: " + ", ".join(EXPERIMENTS)
                + " | shapes: " + ", ".join(SHAPES)
                + " | fields: " + ", ".join(FIELDS)
                + " | families: " + ", ".join(FAMILIES)),
    )
    sub = parser.add_subparsers(dest="experiment")
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", default=None, help="config file path")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=None,
                        help="0 = auto; the result never depends on it")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--rel-tol", type=float, default=None)
        sp.add_argument("--abs-tol", type=float, default=None)
        sp.add_argument("--max-evals", type=int, default=None)
        sp.add_argument("--method", default=None,
                        choices=("tensor-adaptive", "monte-carlo", "radial-angular"))
        sp.add_argument("--format", default=None, choices=("csv", "csv+svg"))
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if not args.experiment:
        parser.print_help()
        return 2
    try:
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                cfg = parse_config(fh.read())
        else:
            cfg = Config()
        cfg.experiment = args.experiment
        for attr, val in (("seed", args.seed), ("threads", args.threads),
                          ("out", args.out), ("rel_tol", args.rel_tol),
                          ("abs_tol", args.abs_tol), ("max_evals", args.max_evals),
                          ("method", args.method), ("out_format", args.format)):
            if val is not None:
                setattr(cfg, attr, val)
        results = run_experiment(cfg)
    except ConfigError as exc:
        for ln, msg in exc.diagnostics:
            print(f"config error (line {ln}): {msg}", file=sys.stderr)
        return 2
    except (FileNotFoundError, KernelValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    os.makedirs(cfg.out, exist_ok=True)
    all_ok = True
    for name, report in results:
        csv_path = os.path.join(cfg.out, f"{name}.csv")
        emit_csv(report, csv_path)
        if cfg.out_format == "csv+svg":
            emit_svg(report, os.path.join(cfg.out, f"{name}.svg"))
        for check_name, ok, detail in report.assertions:
            status = "pass" if ok else "FAIL"
            print(f"[{status}] {name}: {check_name}" + (f" ({detail})" if detail else ""))
            all_ok = all_ok and ok
        print(f"wrote {csv_path}")
    return 0 if all_ok else 1


if __name__ == "__main__":
    sys.exit(main())
