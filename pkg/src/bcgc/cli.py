"""Command-line front end.

    bcgc solve    --workers 20 --model-size 20000 --mu 1e-3 --t0 50
    bcgc sweep    --axis N --values 10,20,30 --workers 10 --model-size 2000 --mu 1e-3 --t0 50
    bcgc train    --workers 8 --model-size 32 --samples-m 64 --mu 1e-3 --t0 50
    bcgc validate --output checks.csv

Parameters may also come from a flat ``key = value`` file given with
``--config``; keys are the flag names without the leading dashes and
command-line flags win over file values.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from . import coding
from .optimizer import SubgradientConfig, closed_form, solve_subgradient
from .runtime import BlockAllocation, SystemConfig, runtime_tau, runtime_tau_hat, s_to_x
from .simulator import (
    SchemeSettings,
    make_least_squares,
    parse_scheme,
    resolve_scheme,
    run_gd_training,
    sweep_experiment,
)
from .straggler import (
    ShiftedExponential,
    harmonic_means_formula,
    harmonic_means_quadrature,
    order_stat_means,
)

COMMANDS = ("solve", "sweep", "train", "validate")
DEFAULT_SWEEP_SCHEMES = ("subgradient", "closed-t", "closed-f", "single-block", "uniform:1")

# flag name -> (kind, default); default None means the flag is required when used.
PARAMS = {
    "workers": ("int", None),
    "model-size": ("int", None),
    "mu": ("float", None),
    "t0": ("float", None),
    "samples-m": ("int", 50),
    "cycles-b": ("float", 1),
    "seed": ("int", 0),
    "draws": ("int", 10_000),
    "scheme": ("list", None),
    "axis": ("str", None),
    "values": ("floats", None),
    "output": ("str", "-"),
    "iters": ("int", 20_000),
    "step-constant": ("float", None),
    "batch": ("int", 1),
    "train-iters": ("int", 50),
    "step": ("float", None),
}

REQUIRED = {
    "solve": ("workers", "model-size", "mu", "t0"),
    "sweep": ("workers", "model-size", "mu", "t0", "axis", "values"),
    "train": ("workers", "model-size", "mu", "t0"),
    "validate": (),
}


class ConfigError(Exception):
    category = "config"


class UnknownParameterError(ConfigError):
    category = "unknown-parameter"


class InvalidValueError(ConfigError):
    category = "invalid-value"


class MissingParameterError(ConfigError):
    category = "missing-parameter"


@dataclass
class ExperimentSpec:
    command: str
    cfg: SystemConfig | None
    dist: ShiftedExponential | None
    schemes: list = field(default_factory=list)
    solver: SubgradientConfig = SubgradientConfig()
    seed: int = 0
    draws: int = 10_000
    axis: str | None = None
    values: list = field(default_factory=list)
    output: str = "-"
    train_iters: int = 50
    step: float | None = None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        if "invalid choice" in message or "the following arguments are required" in message:
            raise MissingParameterError(f"command: {message}; expected one of {', '.join(COMMANDS)}")
        if "expected one argument" in message:
            raise InvalidValueError(message)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bcgc", description="Block coordinate gradient coding: solve, sweep, train, validate.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="flat key = value file; flags override it")
    for name in PARAMS:
        if name == "scheme":
            p.add_argument(
                "--scheme",
                action="append",
                help="subgradient | closed-t | closed-f | single-block | uniform:<s> (repeatable)",
            )
        else:
            p.add_argument(f"--{name}")
    return p


def read_config_file(path: str) -> dict:
    """Parse ``key = value`` lines; returns ``{key: (raw, origin)}``."""
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc.strerror}") from exc
    for lineno, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        origin = f"{path}:{lineno}"
        if "=" not in text:
            raise InvalidValueError(f"{origin}: expected 'key = value', got {text!r}")
        key, raw = (part.strip() for part in text.split("=", 1))
        if key not in PARAMS:
            raise UnknownParameterError(f"{origin}: unknown key {key!r}")
        if key in out:
            raise InvalidValueError(f"{origin}: duplicate key {key!r} (first set at {out[key][1]})")
        out[key] = (raw, origin)
    return out


def _convert(name: str, raw, origin: str):
    kind = PARAMS[name][0]
    where = f"{origin}: --{name}"
    try:
        if kind == "int":
            v = float(raw)
            if v != int(v):
                raise ValueError
            return int(v)
        if kind == "float":
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError
            return v
        if kind == "floats":
            items = [float(x) for x in str(raw).split(",") if x.strip()]
            if not items or not all(math.isfinite(v) for v in items):
                raise ValueError
            return items
        if kind == "list":
            items = raw if isinstance(raw, list) else [raw]
            return [s.strip() for item in items for s in str(item).split(",") if s.strip()]
        return str(raw)
    except ValueError:
        raise InvalidValueError(f"{where} expects a {kind} value, got {raw!r}") from None


def parse_config(argv) -> ExperimentSpec:
    """Merge defaults, the optional config file and flags into a validated spec."""
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if extra:
        raise UnknownParameterError(f"command line: unknown flag(s) {' '.join(extra)}")

    merged = {}
    if args.config:
        merged.update(read_config_file(args.config))
    for name in PARAMS:
        v = getattr(args, name.replace("-", "_"))
        if v is not None:
            merged[name] = (v, "command line")

    values = {}
    for name, (kind, default) in PARAMS.items():
        if name in merged:
            raw, origin = merged[name]
            values[name] = (_convert(name, raw, origin), origin)
        else:
            values[name] = (default, "default")

    for name in REQUIRED[args.command]:
        if values[name][0] is None:
            raise MissingParameterError(f"{args.command} needs --{name} (flag or config key {name!r})")
    return _validate(args.command, values)


def _check(cond: bool, values, name: str, message: str):
    if not cond:
        raise InvalidValueError(f"{values[name][1]}: --{name} {message}, got {values[name][0]!r}")


def _validate(command: str, values) -> ExperimentSpec:
    def get(name):
        return values[name][0]

    if command == "validate":
        return ExperimentSpec(command, None, None, seed=get("seed"), output=get("output"))

    _check(get("workers") >= 1, values, "workers", "must be >= 1")
    _check(get("model-size") >= 1, values, "model-size", "must be >= 1")
    _check(get("samples-m") >= 1, values, "samples-m", "must be >= 1")
    _check(get("cycles-b") > 0, values, "cycles-b", "must be > 0")
    _check(get("mu") > 0, values, "mu", "must be > 0 (rate of the shifted-exponential cycle time)")
    _check(get("t0") >= 0, values, "t0", "must be >= 0 (shift of the cycle time)")
    _check(get("draws") >= 2, values, "draws", "must be >= 2")
    _check(get("iters") >= 1, values, "iters", "must be >= 1")
    _check(get("batch") >= 1, values, "batch", "must be >= 1")
    _check(get("train-iters") >= 1, values, "train-iters", "must be >= 1")
    _check(get("seed") >= 0, values, "seed", "must be >= 0")
    if get("step-constant") is not None:
        _check(get("step-constant") > 0, values, "step-constant", "must be > 0")
    if get("step") is not None:
        _check(get("step") > 0, values, "step", "must be > 0")

    cfg = SystemConfig(get("workers"), get("model-size"), get("samples-m"), get("cycles-b"))
    dist = ShiftedExponential(get("mu"), get("t0"))

    schemes = get("scheme")
    if schemes is None:
        schemes = list(DEFAULT_SWEEP_SCHEMES) if command == "sweep" else ["closed-f"]
    for name in schemes:
        try:
            parse_scheme(name)
        except ValueError as exc:
            raise InvalidValueError(f"{values['scheme'][1]}: --scheme {exc}") from None
    needs_shift = {"closed-f"} & set(schemes) or command == "solve"
    if needs_shift and not dist.t0 > 0:
        raise InvalidValueError(f"{values['t0'][1]}: --t0 must be > 0 for the harmonic-mean closed form")

    axis = get("axis")
    sweep_values = get("values") or []
    if command == "sweep":
        _check(axis in ("N", "mu"), values, "axis", "must be 'N' or 'mu'")
        if axis == "N":
            _check(all(v >= 1 and v == int(v) for v in sweep_values), values, "values", "must be positive integers for axis N")
            sweep_values = [int(v) for v in sweep_values]
        else:
            _check(all(v > 0 for v in sweep_values), values, "values", "must be positive rates for axis mu")
        for name in schemes:
            kind, level = parse_scheme(name)
            if kind == "uniform":
                smallest = min(sweep_values) if axis == "N" else cfg.n_workers
                if level >= smallest:
                    raise InvalidValueError(f"{values['scheme'][1]}: --scheme {name} needs N > {level} in every sweep cell")
    else:
        for name in schemes:
            kind, level = parse_scheme(name)
            if kind == "uniform" and level >= cfg.n_workers:
                raise InvalidValueError(f"{values['scheme'][1]}: --scheme {name} needs level < N={cfg.n_workers}")

    if command == "train":
        if cfg.n_samples % cfg.n_workers:
            raise InvalidValueError(
                f"{values['samples-m'][1]}: --samples-m must be divisible by --workers for training, "
                f"got M={cfg.n_samples}, N={cfg.n_workers}"
            )
        if len(schemes) != 1:
            raise InvalidValueError(f"{values['scheme'][1]}: train takes exactly one --scheme")

    solver = SubgradientConfig(
        max_iters=get("iters"), step_constant=get("step-constant"), batch=get("batch"), seed=get("seed")
    )
    return ExperimentSpec(
        command,
        cfg,
        dist,
        schemes=schemes,
        solver=solver,
        seed=get("seed"),
        draws=get("draws"),
        axis=axis,
        values=sweep_values,
        output=get("output"),
        train_iters=get("train-iters"),
        step=get("step"),
    )


# ---- CSV output -------------------------------------------------------------


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.12g}"


def _write_rows(header, rows, path: str) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if not isinstance(v, str) else v for v in row])
    text = buf.getvalue()
    if path == "-":
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


@dataclass(frozen=True)
class Solutions:
    optimal: BlockAllocation
    closed_t: BlockAllocation
    closed_f: BlockAllocation


def emit_solution_csv(solutions: Solutions, path: str) -> None:
    """``level,x_optimal,x_t,x_f``; one row per level."""
    cols = [solutions.optimal, solutions.closed_t, solutions.closed_f]
    n = cols[0].n_levels
    if any(c.n_levels != n for c in cols):
        raise ValueError("solutions must have the same number of levels")
    rows = [[level] + [c.x[level] if c.integer else float(c.x[level]) for c in cols] for level in range(n)]
    _write_rows(["level", "x_optimal", "x_t", "x_f"], rows, path)


def emit_sweep_csv(table, path: str) -> None:
    """``axis,value,scheme,mean_runtime,ci95_halfwidth,n_draws``; rows in sweep order."""
    rows = [
        [r.axis, r.value, r.scheme, r.estimate.mean, r.estimate.half_width_95, r.estimate.n_draws]
        for r in table
    ]
    _write_rows(["axis", "value", "scheme", "mean_runtime", "ci95_halfwidth", "n_draws"], rows, path)


def emit_trace_csv(trace, path: str) -> None:
    rows = [
        [i, trace.losses[i], trace.losses[i + 1], trace.runtimes[i], trace.gradient_errors[i]]
        for i in range(trace.runtimes.size)
    ]
    _write_rows(["iteration", "loss_before", "loss_after", "runtime", "gradient_rel_error"], rows, path)


def emit_checks_csv(checks, path: str) -> None:
    _write_rows(["check", "passed", "detail"], [[c.name, c.passed, c.detail] for c in checks], path)


# ---- commands ---------------------------------------------------------------


def _settings(spec: ExperimentSpec) -> SchemeSettings:
    return SchemeSettings(solver=spec.solver)


def run_solve(spec: ExperimentSpec) -> Solutions:
    seq = np.random.SeedSequence(spec.seed)
    allocs = {}
    for name, child in zip(("subgradient", "closed-t", "closed-f"), seq.spawn(3)):
        allocs[name] = resolve_scheme(name, spec.cfg, spec.dist, child, _settings(spec)).allocation
    sol = Solutions(allocs["subgradient"], allocs["closed-t"], allocs["closed-f"])
    emit_solution_csv(sol, spec.output)
    return sol


def run_sweep(spec: ExperimentSpec):
    table = sweep_experiment(
        spec.axis, spec.values, spec.schemes, spec.cfg, spec.dist, spec.draws, spec.seed, _settings(spec)
    )
    emit_sweep_csv(table, spec.output)
    return table


def run_train(spec: ExperimentSpec):
    data_seq, scheme_seq, train_seq = np.random.SeedSequence(spec.seed).spawn(3)
    cfg = spec.cfg
    data = make_least_squares(cfg.n_samples, cfg.model_size, np.random.default_rng(data_seq))
    scheme = resolve_scheme(spec.schemes[0], cfg, spec.dist, scheme_seq, _settings(spec))
    trace = run_gd_training(cfg, spec.dist, scheme, data, spec.train_iters, spec.step, train_seq)
    emit_trace_csv(trace, spec.output)
    return trace


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


def validation_checks(seed: int = 0) -> list:
    """Cross-oracle checks: each pairs two independent routes to one quantity."""
    rng = np.random.default_rng(seed)
    checks = []

    worst = 0.0
    for N, a in itertools.product((1, 2, 5, 8, 12), (0.01, 0.05, 1.0, 100.0)):
        d = ShiftedExponential(a / 50.0, 50.0)
        f = harmonic_means_formula(d, N)
        q = harmonic_means_quadrature(d, N)
        worst = max(worst, float(np.max(np.abs(f / q - 1))))
    checks.append(Check("harmonic_means_formula_vs_quadrature", worst <= 1e-6, f"max rel err {worst:.3g} (tol 1e-6, N<=12)"))

    worst = 0.0
    for _ in range(2000):
        N = int(rng.integers(1, 17))
        L = int(rng.integers(1, 65))
        cfg = SystemConfig(N, L, N * int(rng.integers(1, 5)), 1)
        s = np.sort(rng.integers(0, N, L))
        T = ShiftedExponential(1e-3, 50).sample(rng, N)
        a, b = runtime_tau(s, T, cfg), runtime_tau_hat(s_to_x(s, N), T, cfg)
        worst = max(worst, abs(a - b) / a)
    checks.append(Check("coordinate_vs_block_runtime", worst <= 1e-12, f"max rel err {worst:.3g} over 2000 instances"))

    worst = 0.0
    for N, a in itertools.product((2, 5, 10, 20), (0.01, 0.05, 1.0)):
        d = ShiftedExponential(a / 50.0, 50.0)
        cfg = SystemConfig(N, 1000, N, 1)
        for t in (order_stat_means(d, N), harmonic_means_quadrature(d, N)):
            x = closed_form(cfg, t).x
            terms = t[::-1] * np.cumsum(np.arange(1, N + 1) * x)
            worst = max(worst, float(np.ptp(terms) / terms.max()))
    checks.append(Check("closed_form_equalization", worst <= 1e-9, f"max rel spread {worst:.3g}"))

    ok = True
    for N in range(1, 7):
        for s in range(N):
            code = coding.build_code_matrix(N, s, rng)
            ok &= coding.is_decodable(code)
    checks.append(Check("code_decodability", bool(ok), "all straggler sets of size <= s, N <= 6"))

    d = ShiftedExponential(1e-3, 50.0)
    cfg = SystemConfig(5, 500, 50, 1)
    rep = solve_subgradient(cfg, d, SubgradientConfig(max_iters=5000, seed=seed))
    feasible = bool(np.all(rep.allocation.x >= 0) and abs(rep.allocation.x.sum() - 500) <= 1e-9 * 500)
    checks.append(Check("subgradient_feasible", feasible, f"sum {rep.allocation.x.sum():.12g}"))
    return checks


def run_validate(spec: ExperimentSpec) -> list:
    checks = validation_checks(spec.seed)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}", file=sys.stderr)
    if spec.output != "-":
        emit_checks_csv(checks, spec.output)
    return checks


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        spec = parse_config(argv)
    except ConfigError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error[invalid-value]: {exc}", file=sys.stderr)
        return 2
    try:
        if spec.command == "solve":
            run_solve(spec)
        elif spec.command == "sweep":
            run_sweep(spec)
        elif spec.command == "train":
            run_train(spec)
        else:
            checks = run_validate(spec)
            return 0 if all(c.passed for c in checks) else 1
    except OSError as exc:
        print(f"error[io]: cannot write {spec.output!r}: {exc.strerror or exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
