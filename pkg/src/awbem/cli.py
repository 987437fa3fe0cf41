"""Command-line driver: ``awbem solve | study | verify``.

Exit codes: 0 success, 1 runtime error, 2 partial result, 64 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from dataclasses import dataclass

from . import analysis
from .discretize import QuadConfig, RightHandSide
from .layer import ApplyParams
from .solver import (
    LEVEL_LIMIT,
    PartialResultError,
    RhsApproximator,
    SolverConfig,
    SolverError,
    solve,
    write_history_csv,
)
from .surface import make_surface
from .svgplot import Guide, Series, loglog_svg

EXIT_OK, EXIT_ERROR, EXIT_PARTIAL, EXIT_USAGE = 0, 1, 2, 64

log = logging.getLogger("awbem")

#: default guide rates per problem (uniform, adaptive)
GUIDES = {"point": lambda a: (analysis.uniform_rate(a), analysis.adaptive_rate(a)), "cartoon": lambda a: (0.25, 0.5)}


class UsageError(Exception):
    pass


@dataclass
class RunSpec:
    """Everything needed to reproduce a run."""

    surface: str = ""
    rhs: str = ""
    alpha: float = 0.5
    mode: str = "adaptive"
    eps: float = 1e-2
    omega: float = 0.4
    theta: float = 0.3
    max_level: int = LEVEL_LIMIT
    max_dofs: int = 10_000_000
    quad_order: int = QuadConfig().order
    threads: int = 1
    csv: str | None = None
    svg: str | None = None
    dump_solution: str | None = None
    cache: str | None = None
    timing: bool = True
    window: tuple | None = None

    def validate(self) -> None:
        if not self.surface:
            raise UsageError("--surface is required")
        if self.surface not in ("fichera", "cube"):
            raise UsageError(f"unknown surface {self.surface!r}")
        if not self.rhs:
            self.rhs = "point" if self.surface == "fichera" else "cartoon"
        if self.rhs not in ("point", "cartoon", "constant"):
            raise UsageError(f"unknown rhs {self.rhs!r}")
        if self.mode not in ("adaptive", "uniform"):
            raise UsageError(f"unknown mode {self.mode!r}")
        if self.rhs == "point" and self.surface != "fichera":
            raise UsageError("the point rhs needs the fichera surface")
        if not 0 <= self.max_level <= LEVEL_LIMIT:
            raise UsageError(f"--max-level must lie in [0, {LEVEL_LIMIT}]")
        if self.threads < 1:
            raise UsageError("--threads must be >= 1")

    def right_hand_side(self) -> RightHandSide:
        if self.rhs == "point":
            return RightHandSide.point(self.alpha)
        if self.rhs == "cartoon":
            return RightHandSide.cartoon()
        return RightHandSide.constant()

    def solver_config(self, mode: str | None = None) -> SolverConfig:
        return SolverConfig(
            omega=self.omega,
            theta=self.theta,
            eps=self.eps,
            j_max=self.max_level,
            mode=mode or self.mode,
            max_dofs=self.max_dofs,
            quad=QuadConfig(order=self.quad_order),
            fast=ApplyParams(threads=self.threads),
        )


# ---------------------------------------------------------------------------
# config parsing

_FIELDS = {f.name: f for f in dataclasses.fields(RunSpec)}
_CASTS = {
    "alpha": float, "eps": float, "omega": float, "theta": float,
    "max_level": int, "max_dofs": int, "quad_order": int, "threads": int,
}


def _parse_bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {v!r}")


def _parse_window(v: str) -> tuple:
    try:
        a, b = (int(x) for x in v.split(":"))
    except ValueError as exc:
        raise UsageError(f"window must be START:STOP, got {v!r}") from exc
    return (a, b)


def read_config(path: str) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        k = k.replace("-", "_")
        if k == "no_timing":
            k, v = "timing", str(not _parse_bool(v))
        if k not in _FIELDS:
            raise UsageError(f"{path}:{n}: unknown key {k!r}")
        out[k] = v
    return out


def _coerce(key: str, value):
    if not isinstance(value, str):
        return value
    if key in _CASTS:
        try:
            return _CASTS[key](value)
        except ValueError as exc:
            raise UsageError(f"bad value for {key}: {value!r}") from exc
    if key == "timing":
        return _parse_bool(value)
    if key == "window":
        return _parse_window(value)
    return value


def build_spec(args: argparse.Namespace) -> RunSpec:
    values = read_config(args.config) if args.config else {}
    for k in _FIELDS:
        v = getattr(args, k, None)
        if v is not None:
            values[k] = v
    if getattr(args, "no_timing", False):
        values["timing"] = False
    spec = RunSpec(**{k: _coerce(k, v) for k, v in values.items()})
    spec.validate()
    return spec


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="awbem", description="Adaptive wavelet BEM for the Laplace double layer equation.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="key=value file; flags override it")
        sp.add_argument("--surface", choices=["fichera", "cube"])
        sp.add_argument("--rhs", choices=["point", "cartoon", "constant"])
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--eps", type=float)
        sp.add_argument("--omega", type=float)
        sp.add_argument("--theta", type=float, help="coarsening factor")
        sp.add_argument("--max-level", dest="max_level", type=int)
        sp.add_argument("--max-dofs", dest="max_dofs", type=int)
        sp.add_argument("--quad-order", dest="quad_order", type=int)
        sp.add_argument("--csv")
        sp.add_argument("--svg")
        sp.add_argument("--dump-solution", dest="dump_solution")
        sp.add_argument("--cache", help="file holding right-hand side coefficients between runs")
        sp.add_argument("--threads", type=int)
        sp.add_argument("--no-timing", dest="no_timing", action="store_true", help="write 0 for wall times")
        sp.add_argument("-v", "--verbose", action="store_true")

    s = sub.add_parser("solve", help="run one solve")
    common(s)
    s.add_argument("--mode", choices=["adaptive", "uniform"])
    t = sub.add_parser("study", help="adaptive and uniform runs with rates and a plot")
    common(t)
    t.add_argument("--window", type=_parse_window, help="rate-fit index range START:STOP")
    v = sub.add_parser("verify", help="run a self-check suite")
    v.add_argument("suite")
    return p


# ---------------------------------------------------------------------------
# commands


def _approximator(spec: RunSpec, surface, g, cfg) -> RhsApproximator:
    rhs = RhsApproximator(surface, g, cfg.quad, LEVEL_LIMIT)
    if spec.cache and os.path.exists(spec.cache):
        if not rhs.load_cache(spec.cache):
            log.warning("cache %s belongs to another problem; ignored", spec.cache)
    return rhs


def _save_cache(spec: RunSpec, rhs: RhsApproximator) -> None:
    if spec.cache:
        with open(spec.cache, "wb") as fh:
            rhs.save_cache(fh)


def _run(spec: RunSpec, mode: str, rhs: RhsApproximator) -> tuple:
    """Returns ``(state, exit_code)``."""
    surface = rhs.surface
    cfg = spec.solver_config(mode)
    try:
        state = solve(surface, rhs.g, cfg, rhs=rhs)
        code = EXIT_OK
    except PartialResultError as exc:
        log.warning("%s run: %s", mode, exc)
        state, code = exc.state, EXIT_PARTIAL
    return state, code


def _history_lines(history, timing: bool, mode: str | None = None) -> list:
    return [(f"{mode}," if mode else "") + r.csv_row(timing) for r in history]


def _dump(spec: RunSpec, state) -> None:
    if spec.dump_solution and state.u is not None:
        with open(spec.dump_solution, "w") as fh:
            fh.write(state.u.dumps())


def _title(spec: RunSpec) -> str:
    return f"{spec.surface}, {spec.rhs}" + (f", alpha={spec.alpha:g}" if spec.rhs == "point" else "")


def cmd_solve(spec: RunSpec) -> int:
    surface = make_surface(spec.surface)
    g = spec.right_hand_side()
    rhs = _approximator(spec, surface, g, spec.solver_config())
    state, code = _run(spec, spec.mode, rhs)
    _save_cache(spec, rhs)
    if spec.csv:
        write_history_csv(state.history, spec.csv, spec.timing)
    _dump(spec, state)
    if spec.svg and state.history:
        with open(spec.svg, "w") as fh:
            fh.write(loglog_svg([Series(spec.mode, [(r.dofs, r.residual_norm) for r in state.history])],
                                title=_title(spec), ylabel="residual norm"))
    for r in state.history:
        print(f"step {r.step}: dofs={r.dofs} residual={r.residual_norm:.6e} delta={r.delta:.3e}")
    print("converged" if code == EXIT_OK else "partial result: level or size cap reached")
    return code


def study_rates(states: dict, window=None) -> dict:
    out = {}
    for mode, st in states.items():
        pts = [(r.dofs, r.residual_norm) for r in st.history]
        out[mode] = analysis.fit_rate(pts, window) if len(pts) >= 3 else None
    return out


def study_svg(spec: RunSpec, states: dict) -> str:
    series = [
        Series(mode, [(r.dofs, r.residual_norm) for r in st.history], "square" if mode == "uniform" else "circle")
        for mode, st in states.items()
    ]
    guides = []
    rates = GUIDES.get(spec.rhs, lambda a: ())(spec.alpha)
    for rate, mode in zip(rates, ("uniform", "adaptive")):
        h = states[mode].history
        if h:
            guides.append(Guide(rate, h[0].dofs, h[0].residual_norm))
    return loglog_svg(series, guides, title=_title(spec), ylabel="residual norm")


def cmd_study(spec: RunSpec) -> int:
    surface = make_surface(spec.surface)
    g = spec.right_hand_side()
    rhs = _approximator(spec, surface, g, spec.solver_config())
    states, codes = {}, []
    for mode in ("uniform", "adaptive"):
        # each run starts from a fresh expansion so its result does not depend on the other
        rhs.reset()
        states[mode], code = _run(spec, mode, rhs)
        codes.append(code)
    _save_cache(spec, rhs)
    _dump(spec, states["adaptive"])
    if spec.csv:
        with open(spec.csv, "w") as fh:
            fh.write("mode," + "step,dofs,residual,delta,wall_time_s\n")
            for mode, st in states.items():
                fh.write("\n".join(_history_lines(st.history, spec.timing, mode)) + "\n")
    if spec.svg:
        with open(spec.svg, "w") as fh:
            fh.write(study_svg(spec, states))
    for mode, fit in study_rates(states, spec.window).items():
        if fit is None:
            print(f"{mode}: too few points for a rate")
        else:
            print(f"{mode}: rate {fit.slope:.3f} (r2 {fit.r2:.3f}, points {fit.window[0]}..{fit.window[1] - 1})")
    return max(codes)


def cmd_verify(suite: str) -> int:
    from .verify import SUITES, format_table, run_suite

    if suite not in SUITES:
        raise UsageError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    checks, seconds = run_suite(suite)
    print(format_table(checks))
    ok = all(c.passed for c in checks)
    print(f"{suite}: {'all pass' if ok else 'FAILED'} ({seconds:.1f} s)")
    return EXIT_OK if ok else EXIT_ERROR


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required")
        logging.basicConfig(
            level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        if args.command == "verify":
            return cmd_verify(args.suite)
        spec = build_spec(args)
        return cmd_solve(spec) if args.command == "solve" else cmd_study(spec)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"awbem: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, ValueError, OSError) as exc:
        print(f"awbem: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
