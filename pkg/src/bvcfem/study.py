"""Convergence-study driver and command-line interface.

Registers the shipped experiments (p2-ring, p3-ring, unstable-pairing,
q1-ellipse, nitsche-p2-ring), runs mesh ladders end to end, fits rates, and
emits CSV tables, self-contained SVG log-log plots and solution elevations.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field, replace

import numpy as np

from .analysis import (
    DegenerateFit,
    ErrorReport,
    error_report,
    fit_rates,
    infsup_diagnostic,
)
from .assembly import (
    assemble_bvc,
    assemble_nitsche,
    assemble_taylor,
    assemble_unmodified,
    dump_system,
)
from .geometry import make_ellipse_domain, make_ring_domain
from .mesh import build_annulus_mesh, build_staircase_mesh, precompute_boundary_geometry
from .solver import SingularSystem, solve
from .spaces import build_multiplier_space, build_primal_space


class IoError(Exception):
    pass


class ConfigError(Exception):
    pass


ELEMENT_ORDER = {"p1": 1, "p2": 2, "p3": 3, "q1": 1}
ASSEMBLERS = {
    "bvc": assemble_bvc,
    "unmodified": assemble_unmodified,
    "taylor": assemble_taylor,
}
CSV_HEADER = (
    "level,h,nno,dofs_u,dofs_lambda,err_l2,err_h1,err_lambda,"
    "rate_l2,rate_h1,rate_lambda,delta_h,normal_dev"
)


@dataclass
class StudyConfig:
    domain: str = "ring"
    element: str = "p2"
    method: str = "bvc"
    multiplier_degree: object = "auto"  # "auto" means element order - 1
    enrich: bool = True
    levels: int = 5
    gamma0: float | None = None
    out: str | None = None
    plots: str | None = None
    dump_prefix: str | None = None

    def order(self) -> int:
        return ELEMENT_ORDER[self.element]

    def mult_degree(self) -> int:
        if self.multiplier_degree in (None, "auto"):
            return self.order() - 1
        return int(self.multiplier_degree)


def validate_config(config: StudyConfig) -> None:
    if config.domain not in ("ring", "ellipse"):
        raise ConfigError(f"unknown domain {config.domain!r}")
    if config.element not in ELEMENT_ORDER:
        raise ConfigError(f"unknown element {config.element!r}")
    if config.method not in ("bvc", "unmodified", "taylor", "nitsche"):
        raise ConfigError(f"unknown method {config.method!r}")
    if config.element == "q1" and config.domain != "ellipse":
        raise ConfigError("q1 runs on the ellipse staircase only")
    if config.element in ("p1", "p2", "p3") and config.domain != "ring":
        raise ConfigError(f"{config.element} runs on the ring only")
    if config.levels < 1:
        raise ConfigError("levels must be positive")
    if config.method != "nitsche" and config.mult_degree() < 0:
        raise ConfigError("multiplier degree must be >= 0")
    if config.gamma0 is not None and config.gamma0 <= 0:
        raise ConfigError("gamma0 must be positive")


@dataclass
class StudyResult:
    config: StudyConfig
    records: list = field(default_factory=list)   # (level, ErrorReport)
    failures: list = field(default_factory=list)  # (level, message)
    rates: dict | None = None
    elevation: np.ndarray | None = None           # (nno, 3) at finest level
    companion: "StudyResult | None" = None
    infsup_sigmas: list | None = None

    @property
    def reports(self):
        return [r for _, r in self.records]


def _build_level_mesh(domain_name: str, level: int, domain):
    if domain_name == "ring":
        return build_annulus_mesh(16 * 2**level, 4 * 2**level)
    return build_staircase_mesh(16 * 2**level, domain)


def run_level(config: StudyConfig, level: int, domain=None):
    """One rung of the ladder: mesh, spaces, assembly, solve, report."""
    if domain is None:
        domain = make_ring_domain() if config.domain == "ring" else make_ellipse_domain()
    k = config.order()
    mesh = _build_level_mesh(config.domain, level, domain)
    precompute_boundary_geometry(mesh, domain, 2 * k + 2)
    V = build_primal_space(mesh, k, config.enrich)
    if config.method == "nitsche":
        gamma0 = config.gamma0 if config.gamma0 is not None else 10.0 * k * k
        system = assemble_nitsche(mesh, V, domain, gamma0)
    else:
        Lam = build_multiplier_space(mesh, config.mult_degree())
        system = ASSEMBLERS[config.method](mesh, V, Lam, domain)
    if config.dump_prefix:
        dump_system(system, f"{config.dump_prefix}-L{level}")
    u, lam = solve(system)
    return mesh, u, lam, error_report(u, lam, domain, mesh)


def run_study(config: StudyConfig) -> StudyResult:
    """Run the configured ladder; singular levels are recorded, not fatal."""
    validate_config(config)
    domain = make_ring_domain() if config.domain == "ring" else make_ellipse_domain()
    result = StudyResult(config=config)
    for level in range(config.levels):
        try:
            mesh, u, lam, report = run_level(config, level, domain)
        except SingularSystem as exc:
            result.failures.append((level, str(exc)))
            continue
        result.records.append((level, report))
        result.elevation = np.column_stack([mesh.vertices, u.vertex_values()])
    if len(result.reports) >= 3:
        try:
            result.rates = fit_rates(result.reports)
        except DegenerateFit:
            result.rates = None
    return result


def run_unstable_pairing(levels: int = 5) -> StudyResult:
    """P2 primal without bubbles against discontinuous P2 multipliers.

    Returns the corrected-method result with the unmodified run attached as
    companion and the coarse-level inf-sup diagnostic values recorded.
    """
    base = StudyConfig(
        domain="ring", element="p2", method="bvc", multiplier_degree=2,
        enrich=False, levels=levels,
    )
    result = run_study(base)
    result.companion = run_study(replace(base, method="unmodified"))
    domain = make_ring_domain()
    sigmas = []
    for level in range(2):
        mesh = _build_level_mesh("ring", level, domain)
        precompute_boundary_geometry(mesh, domain, 6)
        V = build_primal_space(mesh, 2, enrich=False)
        Lam = build_multiplier_space(mesh, 2)
        sigmas.append(infsup_diagnostic(V, Lam, mesh))
    result.infsup_sigmas = sigmas
    return result


# --- output -----------------------------------------------------------------


def _fmt(x) -> str:
    return "" if x is None else f"{x:.17g}"


def emit_csv(result: StudyResult, path) -> None:
    """One row per solved level, pairwise rates, 17 significant digits."""
    if not result.records:
        raise IoError("study produced no solved levels; nothing to write")
    try:
        with open(path, "w") as fh:
            fh.write(CSV_HEADER + "\n")
            prev = None
            for level, r in result.records:
                rates = {"l2": None, "h1": None, "lambda": None}
                if prev is not None:
                    scale = np.log(prev.h / r.h)
                    rates["l2"] = np.log(prev.err_l2 / r.err_l2) / scale
                    rates["h1"] = np.log(prev.err_h1 / r.err_h1) / scale
                    if r.err_lambda is not None and prev.err_lambda is not None:
                        rates["lambda"] = np.log(prev.err_lambda / r.err_lambda) / scale
                fields = [
                    str(level), _fmt(r.h), str(r.nno), str(r.dofs_u), str(r.dofs_lambda),
                    _fmt(r.err_l2), _fmt(r.err_h1), _fmt(r.err_lambda),
                    _fmt(rates["l2"]), _fmt(rates["h1"]), _fmt(rates["lambda"]),
                    _fmt(r.delta_h), _fmt(r.normal_dev),
                ]
                fh.write(",".join(fields) + "\n")
                prev = r
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_csv(path):
    """Parse an emit_csv file back into per-level dictionaries."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header != CSV_HEADER.split(","):
            raise IoError(f"unexpected CSV header in {path}")
        rows = []
        for line in fh:
            vals = line.strip().split(",")
            row = {}
            for key, tok in zip(header, vals):
                if tok == "":
                    row[key] = None
                elif key in ("level", "nno", "dofs_u", "dofs_lambda"):
                    row[key] = int(tok)
                else:
                    row[key] = float(tok)
            rows.append(row)
    return rows


def expected_rates(config: StudyConfig) -> dict:
    """Reference slopes for plot annotation, from the configured method/order."""
    k = config.order()
    if config.method == "unmodified":
        # geometry error dominates beyond second order
        return {"l2": min(k + 1.0, 2.0), "h1": min(float(k), 2.0), "lambda": min(float(k), 2.0)}
    return {"l2": k + 1.0, "h1": float(k), "lambda": float(k)}


_COLORS = ("#1f6eb4", "#d2422d", "#2d8f57", "#8451a1")
_NORM_LABEL = {"l2": "L2 error", "h1": "H1 seminorm error", "lambda": "multiplier error"}
_NORM_ATTR = {"l2": "err_l2", "h1": "err_h1", "lambda": "err_lambda"}


def _svg_loglog(path, title, ylabel, series, ref_slope=None):
    """Minimal self-contained SVG log-log plot with a reference triangle."""
    W, H = 640, 480
    ml, mr, mt, mb = 72, 24, 42, 56
    xs = np.log10(np.concatenate([s["h"] for s in series]))
    ys = np.log10(np.concatenate([s["err"] for s in series]))
    xlo, xhi = xs.min(), xs.max()
    ylo, yhi = ys.min(), ys.max()
    xpad = 0.1 * max(xhi - xlo, 1e-9)
    ypad = 0.1 * max(yhi - ylo, 1e-9)
    xlo, xhi = xlo - xpad, xhi + xpad
    ylo, yhi = ylo - ypad, yhi + ypad

    def X(lx):
        return ml + (lx - xlo) / (xhi - xlo) * (W - ml - mr)

    def Y(ly):
        return H - mb - (ly - ylo) / (yhi - ylo) * (H - mt - mb)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W/2:.1f}" y="20" text-anchor="middle" font-size="15">{title}</text>',
    ]
    # frame
    out.append(
        f'<rect x="{ml}" y="{mt}" width="{W-ml-mr}" height="{H-mt-mb}" '
        f'fill="none" stroke="black" stroke-width="1"/>'
    )
    # decade ticks and grid
    for p in range(int(np.floor(xlo)), int(np.ceil(xhi)) + 1):
        if xlo <= p <= xhi:
            x = X(p)
            out.append(
                f'<line x1="{x:.1f}" y1="{mt}" x2="{x:.1f}" y2="{H-mb}" '
                f'stroke="#cccccc" stroke-width="0.5"/>'
            )
            out.append(
                f'<text x="{x:.1f}" y="{H-mb+18}" text-anchor="middle">1e{p}</text>'
            )
    for p in range(int(np.floor(ylo)), int(np.ceil(yhi)) + 1):
        if ylo <= p <= yhi:
            y = Y(p)
            out.append(
                f'<line x1="{ml}" y1="{y:.1f}" x2="{W-mr}" y2="{y:.1f}" '
                f'stroke="#cccccc" stroke-width="0.5"/>'
            )
            out.append(
                f'<text x="{ml-6}" y="{y+4:.1f}" text-anchor="end">1e{p}</text>'
            )
    out.append(
        f'<text x="{(ml+W-mr)/2:.1f}" y="{H-12}" text-anchor="middle">h</text>'
    )
    out.append(
        f'<text x="16" y="{(mt+H-mb)/2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {(mt+H-mb)/2:.1f})">{ylabel}</text>'
    )
    # data series
    for i, s in enumerate(series):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(
            f"{X(np.log10(h)):.2f},{Y(np.log10(e)):.2f}"
            for h, e in zip(s["h"], s["err"])
        )
        out.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.6"/>'
        )
        for h, e in zip(s["h"], s["err"]):
            out.append(
                f'<circle cx="{X(np.log10(h)):.2f}" cy="{Y(np.log10(e)):.2f}" '
                f'r="3.4" fill="{color}"/>'
            )
        out.append(
            f'<line x1="{W-mr-150}" y1="{mt+16+16*i}" x2="{W-mr-122}" '
            f'y2="{mt+16+16*i}" stroke="{color}" stroke-width="1.6"/>'
        )
        out.append(
            f'<text x="{W-mr-116}" y="{mt+20+16*i}">{s["label"]}</text>'
        )
    # reference-slope triangle under the first series
    if ref_slope is not None:
        s0 = series[0]
        hs = np.asarray(s0["h"], dtype=float)
        es = np.asarray(s0["err"], dtype=float)
        i1 = len(hs) - 1
        lx2, lx1 = np.log10(hs[i1 - 1]), np.log10(hs[i1])
        ly1 = np.log10(es[i1]) - 0.35
        ly2 = ly1 + ref_slope * (lx2 - lx1)
        out.append(
            f'<polygon points="{X(lx1):.2f},{Y(ly1):.2f} {X(lx2):.2f},{Y(ly1):.2f} '
            f'{X(lx2):.2f},{Y(ly2):.2f}" fill="none" stroke="#555555" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{(X(lx1)+X(lx2))/2:.1f}" y="{Y(ly1)+14:.1f}" '
            f'text-anchor="middle" fill="#555555">1</text>'
        )
        out.append(
            f'<text x="{X(lx2)+6:.1f}" y="{(Y(ly1)+Y(ly2))/2:.1f}" '
            f'fill="#555555">{ref_slope:g}</text>'
        )
    out.append("</svg>")
    try:
        with open(path, "w") as fh:
            fh.write("\n".join(out) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def emit_plots(result: StudyResult, prefix) -> None:
    """SVG log-log plot per norm (companion overlaid) plus an elevation dump."""
    if not result.records:
        raise IoError("study produced no solved levels; nothing to plot")
    ref = expected_rates(result.config)
    for norm in ("l2", "h1", "lambda"):
        attr = _NORM_ATTR[norm]
        series = []
        for res, label in ((result, result.config.method), (result.companion, None)):
            if res is None or not res.records:
                continue
            label = label if label is not None else res.config.method
            hs = [r.h for r in res.reports if getattr(r, attr) is not None]
            es = [getattr(r, attr) for r in res.reports if getattr(r, attr) is not None]
            if hs:
                series.append({"label": label, "h": hs, "err": es})
        if not series:
            continue
        _svg_loglog(
            f"{prefix}-{norm}.svg",
            f"{result.config.domain} {result.config.element}: {_NORM_LABEL[norm]}",
            _NORM_LABEL[norm],
            series,
            ref_slope=ref[norm],
        )
    if result.elevation is not None:
        try:
            with open(f"{prefix}-elevation.txt", "w") as fh:
                for x, y, u in result.elevation:
                    fh.write(f"{x:.17g} {y:.17g} {u:.17g}\n")
        except OSError as exc:
            raise IoError(f"cannot write elevation: {exc}") from exc


# --- presets ------------------------------------------------------------------


@dataclass(frozen=True)
class Preset:
    name: str
    config: StudyConfig
    comparison: str | None = None      # method overlaid for contrast
    checks: dict | None = None         # norm -> (lo, hi) on last-3 LS rates
    special: str | None = None


PRESETS = {
    "p2-ring": Preset(
        name="p2-ring",
        config=StudyConfig(domain="ring", element="p2", method="bvc"),
        comparison="unmodified",
        checks={"l2": (2.8, 3.3), "h1": (1.8, 2.3), "lambda": (1.7, 2.3)},
    ),
    "p3-ring": Preset(
        name="p3-ring",
        config=StudyConfig(domain="ring", element="p3", method="bvc"),
        comparison="unmodified",
        checks={"l2": (3.7, 4.3), "h1": (2.8, 3.3), "lambda": (2.6, 3.4)},
    ),
    "q1-ellipse": Preset(
        name="q1-ellipse",
        config=StudyConfig(domain="ellipse", element="q1", method="bvc"),
        comparison="unmodified",
        checks={"l2": (1.7, 2.3), "h1": (0.8, 1.3)},
    ),
    "unstable-pairing": Preset(
        name="unstable-pairing",
        config=StudyConfig(
            domain="ring", element="p2", method="bvc",
            multiplier_degree=2, enrich=False,
        ),
        special="unstable",
    ),
    "nitsche-p2-ring": Preset(
        name="nitsche-p2-ring",
        config=StudyConfig(domain="ring", element="p2", method="nitsche"),
        checks={"l2": (2.8, 3.3)},
    ),
}


def check_rates(result: StudyResult, checks: dict) -> list:
    """Compare last-3 least-squares rates against declared windows."""
    msgs = []
    if result.failures:
        msgs.append(f"levels failed: {result.failures}")
    if result.rates is None:
        msgs.append("no rates could be fitted")
        return msgs
    for norm, (lo, hi) in checks.items():
        if norm not in result.rates:
            msgs.append(f"{norm}: no data")
            continue
        got = result.rates[norm].last3
        if not (lo <= got <= hi):
            msgs.append(f"{norm}: rate {got:.2f} outside [{lo}, {hi}]")
    return msgs


def check_unstable(result: StudyResult) -> list:
    """Validate the expected instability/stabilization signature."""
    msgs = []
    unmod = result.companion
    failed = bool(unmod and unmod.failures)
    if not failed and unmod is not None and unmod.rates and "l2" in unmod.rates:
        failed = unmod.rates["l2"].last3 < 0.5
    if not failed and result.infsup_sigmas and len(result.infsup_sigmas) >= 2:
        failed = result.infsup_sigmas[1] <= result.infsup_sigmas[0] / 10.0
    if not failed:
        msgs.append("unmodified branch did not exhibit the expected failure")
    if result.rates is None or "l2" not in result.rates:
        msgs.append("corrected branch produced no L2 rate")
    elif not (2.7 <= result.rates["l2"].last3 <= 3.3):
        msgs.append(f"corrected L2 rate {result.rates['l2'].last3:.2f} outside [2.7, 3.3]")
    lam = [r.err_lambda for r in result.reports if r.err_lambda is not None]
    if len(lam) < 3 or not (lam[-3] > lam[-2] > lam[-1]):
        msgs.append("multiplier error not monotonically decreasing over last 3 levels")
    return msgs


def run_preset(name: str, levels: int | None = None) -> tuple:
    """Run a registered experiment; returns (result, check_messages)."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
    preset = PRESETS[name]
    if preset.special == "unstable":
        result = run_unstable_pairing(levels or preset.config.levels)
        return result, check_unstable(result)
    config = preset.config if levels is None else replace(preset.config, levels=levels)
    result = run_study(config)
    if preset.comparison:
        result.companion = run_study(replace(config, method=preset.comparison))
    msgs = check_rates(result, preset.checks) if preset.checks else []
    return result, msgs


# --- CLI ----------------------------------------------------------------------


_CONFIG_KEYS = {
    "preset", "domain", "element", "method", "levels", "gamma0",
    "multiplier_degree", "enrich", "out", "plots",
}


def parse_config_file(path) -> dict:
    """key = value lines, '#' comments; unknown keys are errors."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (t.strip() for t in line.split("=", 1))
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = value
    return out


def _print_result(result: StudyResult, label: str) -> None:
    print(f"== {label} ==")
    for level, msg in result.failures:
        print(f"  level {level}: FAILED ({msg})")
    prev = None
    for level, r in result.records:
        line = (
            f"  level {level}: h={r.h:.5f} nno={r.nno} dofs={r.dofs_u}+{r.dofs_lambda}"
            f"  L2={r.err_l2:.3e}"
        )
        if prev is not None:
            line += f" ({np.log(prev.err_l2 / r.err_l2) / np.log(prev.h / r.h):.2f})"
        line += f"  H1={r.err_h1:.3e}"
        if r.err_lambda is not None:
            line += f"  lam={r.err_lambda:.3e}"
        line += f"  delta_h={r.delta_h:.2e}"
        print(line)
        prev = r
    if result.rates:
        summary = "  rates (last-3 LS): " + "  ".join(
            f"{norm}={fit.last3:.2f}" for norm, fit in sorted(result.rates.items())
        )
        print(summary)
    if result.infsup_sigmas:
        print(f"  inf-sup sigma_min (coarse levels): {result.infsup_sigmas}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="study",
        description="Run a convergence study of the boundary-corrected methods.",
    )
    parser.add_argument("--preset", help="registered experiment name")
    parser.add_argument("--domain", choices=["ring", "ellipse"])
    parser.add_argument("--element", choices=["p1", "p2", "p3", "q1"])
    parser.add_argument("--method", choices=["bvc", "unmodified", "taylor", "nitsche"])
    parser.add_argument("--levels", type=int)
    parser.add_argument("--gamma0", type=float)
    parser.add_argument("--multiplier-degree", dest="multiplier_degree")
    parser.add_argument("--no-enrich", action="store_true")
    parser.add_argument("--out", help="CSV output path")
    parser.add_argument("--plots", help="prefix for SVG plots and elevation dump")
    parser.add_argument("--config", help="key = value config file (flags override)")
    parser.add_argument("--dump-matrices", dest="dump_prefix", help="debug matrix dump prefix")
    args = parser.parse_args(argv)

    try:
        settings = {}
        if args.config:
            raw = parse_config_file(args.config)
            for key, value in raw.items():
                if key in ("levels",):
                    settings[key] = int(value)
                elif key in ("gamma0",):
                    settings[key] = float(value)
                elif key == "enrich":
                    settings[key] = value.lower() in ("1", "true", "yes", "on")
                else:
                    settings[key] = value
        for key in ("preset", "domain", "element", "method", "levels", "gamma0",
                    "multiplier_degree", "out", "plots", "dump_prefix"):
            value = getattr(args, key, None)
            if value is not None:
                settings[key] = value
        if args.no_enrich:
            settings["enrich"] = False

        preset_name = settings.pop("preset", None)
        out_path = settings.pop("out", None)
        plot_prefix = settings.pop("plots", None)

        if preset_name:
            levels = settings.get("levels")
            result, msgs = run_preset(preset_name, levels=levels)
            label = f"preset {preset_name}"
        else:
            config = StudyConfig(**settings)
            result = run_study(config)
            msgs = []
            label = f"{config.domain}/{config.element}/{config.method}"
            if result.failures:
                msgs.append(f"levels failed: {result.failures}")

        _print_result(result, label)
        if result.companion is not None:
            _print_result(result.companion, f"{label} ({result.companion.config.method})")

        if out_path:
            emit_csv(result, out_path)
            if result.companion is not None and result.companion.records:
                stem, dot, ext = out_path.rpartition(".")
                companion_path = (
                    f"{stem}-{result.companion.config.method}{dot}{ext}"
                    if dot
                    else f"{out_path}-{result.companion.config.method}"
                )
                emit_csv(result.companion, companion_path)
            print(f"wrote {out_path}")
        if plot_prefix:
            emit_plots(result, plot_prefix)
            print(f"wrote {plot_prefix}-*.svg")

        if preset_name and msgs:
            for msg in msgs:
                print(f"CHECK FAILED: {msg}")
            return 2
        if not preset_name and msgs:
            for msg in msgs:
                print(f"ERROR: {msg}")
            return 1
        if PRESETS.get(preset_name) and PRESETS[preset_name].checks:
            print("all rate checks passed")
        return 0
    except (ConfigError, IoError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pipeline failure
        print(f"pipeline error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
