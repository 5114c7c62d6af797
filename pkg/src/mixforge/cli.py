"""Command-line entry point: ``mixforge <command> --config <file> --seed <n> --out <dir>``.

Configuration is a flat text file of ``key = value`` lines grouped under
``[section]`` headers; ``#`` starts a comment.  Missing keys take the defaults
below, ``auto`` selects a model-dependent default.

======================  =========================  ==========================================
key                     default                    meaning
======================  =========================  ==========================================
[flow] model            nse                        ``nse`` or ``cgl``
[flow] viscosity        0.5                        ν (nse), > 0
[flow] nu1, nu2         1.0, 0.0                   complex diffusion (cgl)
[flow] gamma            0.5                        linear damping (cgl), > 0
[flow] power            1                          nonlinearity exponent r (cgl)
[flow] grid_size        32                         grid points per side
[flow] substeps         8                          time substeps per unit step (power of two)
[flow] sobolev_index    auto                       state norm index (1 nse, 2 cgl)
[flow] dealias_radius   auto                       retained |k| (N/3 rule)
[flow] blowup_factor    1000.0                     norm guard multiplier
[noise] modes           auto                       forced spatial fields I (8 nse, 10 cgl)
[noise] levels          auto                       Haar levels J (0)
[noise] amplitude       auto                       B0 in b_i = B0 i^-decay (1.5 nse, 1.0 cgl)
[noise] decay           auto                       amplitude decay exponent (2.0)
[noise] density_slope   0.5                        tent density slope s in [0, 1)
[noise] kick_mode       false                      unforced steps followed by random kicks
[noise] paths           1                          paths written by noise-sample
[coupling] eps          auto                       right-inverse target (0.5 nse, 0.55 cgl)
[coupling] variant      projected                  ``projected`` or ``truncated``
[coupling] clamp        auto                       shifted-noise clamp (none nse, 2.0 cgl)
[coupling] n_test       20                         test images per calibration base
[coupling] n_squeeze    200                        squeeze samples per δ trial
[coupling] n_tv         100                        TV samples per distance
[coupling] n_diss       40                         dissipativity samples per radius
[coupling] steps        5                          steps taken by couple-step
[mixing] n_pairs        256                        coupled pairs
[mixing] steps          40                         horizon K
[mixing] init_steps     8                          chain steps before pairing
[mixing] n_functionals  64                         clipped-linear test functionals
[mixing] n_boot         100                        bootstrap resamples
[stationary] n_traj     64                         trajectories per start radius
[stationary] window     20                         averaging window
[stationary] burn_in    auto                       steps discarded (from κ and γ)
[stationary] R_star     auto                       outer start radius (from calibration)
[stationary] kappa      auto                       contraction rate for the burn-in
[stationary] zero_noise false                      run without noise
[simulate] steps        10                         unit steps
[simulate] radius       0.0                        norm of the initial state
[tangent] truncation    auto                       noise columns of A (all)
[verify] scale          quick                      ``quick`` or ``full``
[run] threads           1                          worker cap (MIXFORGE_THREADS lowers it)
[run] verbosity         1                          0 silent, 1 progress lines
======================  =========================  ==========================================

Exit status is 0 on success, 1 on validation errors and 2 when a numerical
guard trips (blow-up, coupling failure, non-mixing fit, failed invariant).
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from .coupling_engine import CouplingError, calibrate_engine
from .fields import field_to_csv_rows, sobolev_norm
from .haar_noise import (
    MODEL_NOISE, default_noise_spec, kick_sample, path_to_csv_rows, rng_stream, sample_noise_path,
)
from .mixing_harness import (
    CalibratedEngine, DEFAULT_EPS, MixingConfig, estimate_stationary, run_coupled_ensemble, write_csv,
    write_mixing_report, write_stationary,
)
from .right_inverse import CalibrationError, calibrate
from .spectral_models import BlowUpError, FlowConfig, flow_map, model_basis
from .tangent_adjoint import adjoint_flow, assemble_A, base_from_fields, fd_check, tangent_flow

COMMANDS = ("noise-sample", "simulate", "tangent-check", "calibrate-inverse", "couple-step",
            "mixing-run", "stationary", "verify-all")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2

AUTO = None

# section -> key -> (type, default); None default means "auto"
SCHEMA = {
    "flow": {
        "model": (str, "nse"), "viscosity": (float, 0.5), "nu1": (float, 1.0), "nu2": (float, 0.0),
        "gamma": (float, 0.5), "power": (int, 1), "grid_size": (int, 32), "substeps": (int, 8),
        "sobolev_index": (int, AUTO), "dealias_radius": (int, AUTO), "blowup_factor": (float, 1000.0),
    },
    "noise": {
        "modes": (int, AUTO), "levels": (int, AUTO), "amplitude": (float, AUTO), "decay": (float, AUTO),
        "density_slope": (float, 0.5), "kick_mode": (bool, False), "paths": (int, 1),
    },
    "coupling": {
        "eps": (float, AUTO), "variant": (str, "projected"), "clamp": (float, AUTO), "n_test": (int, 20),
        "n_squeeze": (int, 200), "n_tv": (int, 100), "n_diss": (int, 40), "steps": (int, 5),
    },
    "mixing": {
        "n_pairs": (int, 256), "steps": (int, 40), "init_steps": (int, 8), "n_functionals": (int, 64),
        "n_boot": (int, 100),
    },
    "stationary": {
        "n_traj": (int, 64), "window": (int, 20), "burn_in": (int, AUTO), "R_star": (float, AUTO),
        "kappa": (float, AUTO), "zero_noise": (bool, False),
    },
    "simulate": {"steps": (int, 10), "radius": (float, 0.0)},
    "tangent": {"truncation": (int, AUTO)},
    "verify": {"scale": (str, "quick")},
    "run": {"threads": (int, 1), "verbosity": (int, 1)},
}

# (section, key, predicate, constraint text)
CONSTRAINTS = [
    ("flow", "model", lambda v: v in ("nse", "cgl"), "must be 'nse' or 'cgl'"),
    ("flow", "viscosity", lambda v: v > 0, "must be positive"),
    ("flow", "nu1", lambda v: v > 0, "must be positive"),
    ("flow", "nu2", lambda v: v >= 0, "must be non-negative"),
    ("flow", "gamma", lambda v: v > 0, "must be positive"),
    ("flow", "power", lambda v: v >= 1, "must be >= 1"),
    ("flow", "grid_size", lambda v: v >= 8 and v % 2 == 0, "must be even and >= 8"),
    ("flow", "substeps", lambda v: v >= 1 and v & (v - 1) == 0, "must be a power of two"),
    ("flow", "sobolev_index", lambda v: v >= 1, "must be >= 1"),
    ("flow", "dealias_radius", lambda v: v >= 1, "must be >= 1"),
    ("flow", "blowup_factor", lambda v: v > 1, "must exceed 1"),
    ("noise", "modes", lambda v: v >= 1, "must be >= 1"),
    ("noise", "levels", lambda v: v >= 0, "must be >= 0"),
    ("noise", "amplitude", lambda v: v > 0, "must be positive"),
    ("noise", "decay", lambda v: v >= 0, "must be non-negative"),
    ("noise", "density_slope", lambda v: 0 <= v < 1, "must lie in [0, 1)"),
    ("noise", "paths", lambda v: v >= 1, "must be >= 1"),
    ("coupling", "eps", lambda v: 0 < v < 1, "must lie in (0, 1)"),
    ("coupling", "variant", lambda v: v in ("projected", "truncated"), "must be 'projected' or 'truncated'"),
    ("coupling", "clamp", lambda v: v > 1, "must exceed 1"),
    ("coupling", "n_test", lambda v: v >= 1, "must be >= 1"),
    ("coupling", "n_squeeze", lambda v: v >= 1, "must be >= 1"),
    ("coupling", "n_tv", lambda v: v >= 1, "must be >= 1"),
    ("coupling", "n_diss", lambda v: v >= 2, "must be >= 2"),
    ("coupling", "steps", lambda v: v >= 1, "must be >= 1"),
    ("mixing", "n_pairs", lambda v: v >= 1, "must be >= 1"),
    ("mixing", "steps", lambda v: v >= 1, "must be >= 1"),
    ("mixing", "init_steps", lambda v: v >= 0, "must be >= 0"),
    ("mixing", "n_functionals", lambda v: v >= 1, "must be >= 1"),
    ("mixing", "n_boot", lambda v: v >= 1, "must be >= 1"),
    ("stationary", "n_traj", lambda v: v >= 2, "must be >= 2"),
    ("stationary", "window", lambda v: v >= 1, "must be >= 1"),
    ("stationary", "burn_in", lambda v: v >= 0, "must be >= 0"),
    ("stationary", "R_star", lambda v: v > 0, "must be positive"),
    ("stationary", "kappa", lambda v: 0 <= v < 1, "must lie in [0, 1)"),
    ("simulate", "steps", lambda v: v >= 1, "must be >= 1"),
    ("simulate", "radius", lambda v: v >= 0, "must be non-negative"),
    ("tangent", "truncation", lambda v: v >= 1, "must be >= 1"),
    ("verify", "scale", lambda v: v in ("quick", "full"), "must be 'quick' or 'full'"),
    ("run", "threads", lambda v: v >= 1, "must be >= 1"),
    ("run", "verbosity", lambda v: v >= 0, "must be >= 0"),
]


class ConfigError(ValueError):
    """Parse or validation failure; ``line`` is set for parse errors."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


def default_config() -> dict:
    return {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}


def _parse_value(typ, text: str):
    if text.lower() == "auto":
        return AUTO
    if typ is bool:
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if typ is int:
        return int(text)
    if typ is float:
        v = float(text)
        if not math.isfinite(v):
            raise ValueError(f"expected a finite number, got {text!r}")
        return v
    return text


def parse_config(text: str) -> dict:
    """Parse config text into the full nested dictionary, defaults filled in."""
    cfg = default_config()
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno)
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        if section is None:
            raise ConfigError("key outside any [section]", lineno)
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno)
        try:
            cfg[section][key] = _parse_value(SCHEMA[section][key][0], val)
        except ValueError as exc:
            raise ConfigError(f"{section}.{key}: {exc}", lineno) from None
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict):
    for sec, key, ok, text in CONSTRAINTS:
        v = cfg[sec][key]
        if v is not AUTO and not ok(v):
            raise ConfigError(f"{sec}.{key} = {v!r}: {text}")
    try:
        flow_config(cfg)
        noise_spec(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> dict:
    if path is None:
        return default_config()
    with open(path) as fh:
        return parse_config(fh.read())


def _emit_value(v) -> str:
    if v is AUTO:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_config(cfg: dict) -> str:
    lines = []
    for sec, keys in SCHEMA.items():
        lines.append(f"[{sec}]")
        lines.extend(f"{k} = {_emit_value(cfg[sec][k])}" for k in keys)
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------- config -> module objects

def flow_config(cfg: dict) -> FlowConfig:
    return FlowConfig(**cfg["flow"])


def noise_spec(cfg: dict):
    f, n = cfg["flow"], cfg["noise"]
    base = MODEL_NOISE[f["model"]]
    pick = lambda key, name: base[name] if n[key] is AUTO else n[key]
    return default_noise_spec(I=pick("modes", "I"), J=pick("levels", "J"), B0=pick("amplitude", "B0"),
                              b_decay=pick("decay", "b_decay"), density_slope=n["density_slope"],
                              kick_mode=n["kick_mode"])


def epsilon(cfg: dict) -> float:
    e = cfg["coupling"]["eps"]
    return DEFAULT_EPS[cfg["flow"]["model"]] if e is AUTO else e


def mixing_config(cfg: dict, seed: int) -> MixingConfig:
    mx = cfg["mixing"]
    return MixingConfig(flow=flow_config(cfg), noise=noise_spec(cfg), n_pairs=mx["n_pairs"], steps=mx["steps"],
                        eps=epsilon(cfg), seed=seed, init_steps=mx["init_steps"],
                        n_functionals=mx["n_functionals"], n_boot=mx["n_boot"])


def engine_from_config(cfg: dict, seed: int) -> CalibratedEngine:
    c = cfg["coupling"]
    eng, kd, cal = calibrate_engine(flow_config(cfg), noise_spec(cfg), epsilon(cfg), seed=seed,
                                    variant=c["variant"], clamp=c["clamp"], n_test=c["n_test"],
                                    n_squeeze=c["n_squeeze"], n_tv=c["n_tv"], n_diss=c["n_diss"])
    return CalibratedEngine(eng, kd, cal)


@dataclass
class RunConfig:
    command: str
    config_path: str | None
    seed: int
    out: str
    verbosity: int = 1
    config: dict | None = None

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned value")
        if self.config is None:
            self.config = load_config(self.config_path)
        os.makedirs(self.out, exist_ok=True)
        if not os.access(self.out, os.W_OK):
            raise ConfigError(f"output directory {self.out!r} is not writable")

    def log(self, msg: str):
        if self.verbosity > 0:
            print(msg, file=sys.stderr)

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)


def _apply_threads(cfg: dict):
    threads = cfg["run"]["threads"]
    env = os.environ.get("MIXFORGE_THREADS")
    if env is not None:
        try:
            threads = min(threads, max(1, int(env)))
        except ValueError:
            pass
    os.environ["MIXFORGE_THREADS"] = str(threads)
    return threads


# ---------------------------------------------------------------- commands

def _field_columns(u):
    return ("k1", "k2", "re", "im") + (("component",) if u.kind == "velocity2d" else ())


def cmd_noise_sample(rc: RunConfig) -> int:
    spec = noise_spec(rc.config)
    basis = model_basis(flow_config(rc.config), spec.I)
    for j in range(rc.config["noise"]["paths"]):
        path = sample_noise_path(spec, rng_stream(rc.seed, 1, j))
        write_csv(rc.path(f"noise_path_{j:03d}.csv"), ("i", "level", "shift", "xi"), path_to_csv_rows(path))
        if spec.kick_mode:
            kick = kick_sample(spec, rng_stream(rc.seed, 1, j, 1), basis)
            write_csv(rc.path(f"kick_{j:03d}.csv"), _field_columns(kick), field_to_csv_rows(kick))
    return EXIT_OK


def _initial_field(rc: RunConfig, model):
    radius = rc.config["simulate"]["radius"]
    if radius == 0:
        return model.zeros()
    return model.random_directions(rng_stream(rc.seed, 2, 0), 1)[0] * radius


def cmd_simulate(rc: RunConfig) -> int:
    from .coupling_engine import FlowModel
    cfg, spec = flow_config(rc.config), noise_spec(rc.config)
    m = FlowModel(cfg, spec)
    u = m.field(_initial_field(rc, m))
    field_cols = _field_columns(u)
    rows = [(0, sobolev_norm(u, cfg.m), sobolev_norm(u, 0))]
    write_csv(rc.path("field_000.csv"), field_cols, field_to_csv_rows(u))
    for k in range(1, rc.config["simulate"]["steps"] + 1):
        if spec.kick_mode:
            # unforced unit step followed by an impulsive kick
            u = flow_map(u, None, cfg) + kick_sample(spec, rng_stream(rc.seed, 2, 1, k), m.basis)
        else:
            u = flow_map(u, sample_noise_path(spec, rng_stream(rc.seed, 2, 1, k)), cfg)
        rows.append((k, sobolev_norm(u, cfg.m), sobolev_norm(u, 0)))
        write_csv(rc.path(f"field_{k:03d}.csv"), field_cols, field_to_csv_rows(u))
    write_csv(rc.path("trajectory.csv"), ("step", "norm_m", "norm_l2"), rows)
    return EXIT_OK


def cmd_tangent_check(rc: RunConfig) -> int:
    from .coupling_engine import FlowModel
    from .fields import l2_pairing
    cfg, spec = flow_config(rc.config), noise_spec(rc.config)
    m = FlowModel(cfg, spec)
    rng = rng_stream(rc.seed, 3)
    u = m.field(m.chain_states(rng, 1)[0])
    path = sample_noise_path(spec, rng)
    base = base_from_fields(u, path, cfg)
    A = assemble_A(u, path, cfg, rc.config["tangent"]["truncation"], base=base)
    write_csv(rc.path("tangent.csv"), ("row", "col", "value"), A.csv_rows())
    gram = [("H", i, float(w)) for i, w in enumerate(A.gram_H)] + [("E", j, float(w)) for j, w in enumerate(A.gram_E)]
    write_csv(rc.path("tangent_gram.csv"), ("space", "index", "weight"), gram)
    h = m.field(m.random_directions(rng, 1)[0])
    dxi = rng.standard_normal(spec.dim)
    dxi /= np.linalg.norm(dxi)
    eps_list = [1e-2, 5e-3, 2e-3, 1e-3, 5e-4, 2e-4, 1e-4]
    rows = [("u",) + r for r in fd_check(u, path, cfg, h, eps_list, "u")]
    rows += [("eta",) + r for r in fd_check(u, path, cfg, dxi, eps_list, "eta")]
    write_csv(rc.path("fd_check.csv"), ("wrt", "eps", "remainder", "ratio"), rows)
    w1 = m.field(m.random_directions(rng, 1)[0])
    adj = adjoint_flow(u, path, w1, cfg, base)
    v1 = tangent_flow(u, path, h, None, cfg, base)
    vx = tangent_flow(u, path, None, dxi, cfg, base)
    pair = [("u", l2_pairing(v1, w1), l2_pairing(h, adj.at(0.0))),
            ("eta", l2_pairing(vx, w1), float(adj.noise_gradient @ dxi))]
    write_csv(rc.path("adjoint_pairing.csv"), ("wrt", "tangent_side", "adjoint_side"), pair)
    return EXIT_OK


def cmd_calibrate_inverse(rc: RunConfig) -> int:
    from .coupling_engine import FlowModel, _test_fields
    cfg, spec = flow_config(rc.config), noise_spec(rc.config)
    m = FlowModel(cfg, spec)
    rng = rng_stream(rc.seed, 4)
    X = m.chain_states(rng, 1)[0]
    op, F, vn = _test_fields(m, rng, X, m.sample_noise(rng), rc.config["coupling"]["n_test"])
    cal = calibrate(op, F, vn, epsilon(rc.config), variant=rc.config["coupling"]["variant"])
    write_csv(rc.path("calibration.csv"), ("r", "M", "max_defect_ratio", "operator_norm_estimate"),
              cal.csv_rows())
    if not cal.feasible:
        rc.log(f"no lattice point reaches eps={cal.epsilon:g}; best {cal.best_ratio:.4g}")
        return EXIT_NUMERICAL
    rc.log(f"chosen r={cal.chosen.r:g} M={cal.chosen.M}")
    return EXIT_OK


STEP_COLUMNS = ("step", "branch", "distance_before", "distance_after", "squeeze_ratio", "glued_equal",
                "tv_estimate", "clamped")


def _write_engine_summary(rc: RunConfig, ce: CalibratedEngine):
    write_csv(rc.path("engine_calibration.csv"), ("key", "value"), sorted(ce.calibration.summary().items()))
    write_csv(rc.path("kdensity.csv"), ("n", "a_n"), enumerate(ce.kd.table.tolist(), start=1))


def cmd_couple_step(rc: RunConfig) -> int:
    ce = engine_from_config(rc.config, rc.seed)
    _write_engine_summary(rc, ce)
    eng = ce.engine
    m = eng.model
    rng = rng_stream(rc.seed, 5)
    X = m.chain_states(rng, 1)[0]
    Xp = X + m.random_directions(rng, 1)[0] * (0.5 * ce.kd.d0)
    rows = []
    for k in range(rc.config["coupling"]["steps"]):
        o = eng.step(X, Xp, rng_stream(rc.seed, 5, k), d0=ce.kd.d0)
        rows.append(o.csv_row(k))
        X, Xp = o.u1, o.u1p
    write_csv(rc.path("coupling_steps.csv"), STEP_COLUMNS, rows)
    return EXIT_OK


def cmd_mixing_run(rc: RunConfig) -> int:
    mc = mixing_config(rc.config, rc.seed)
    ce = engine_from_config(rc.config, rc.seed)
    _write_engine_summary(rc, ce)
    log = []
    rep = run_coupled_ensemble(mc, ce, step_log=log)
    write_mixing_report(rep, rc.out)
    write_csv(rc.path("coupling_steps.csv"), STEP_COLUMNS, log)
    rc.log(f"kappa={rep.fit.kappa:.4g} band=({rep.fit.band[0]:.4g}, {rep.fit.band[1]:.4g})")
    if rep.fit.inconclusive:
        rc.log("decay fit does not exclude kappa >= 1")
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_stationary(rc: RunConfig) -> int:
    st = rc.config["stationary"]
    R_star = st["R_star"]
    if R_star is AUTO:
        R_star = engine_from_config(rc.config, rc.seed).kd.R_star
    est = estimate_stationary(flow_config(rc.config), noise_spec(rc.config), R_star=R_star, kappa=st["kappa"],
                              burn_in=st["burn_in"], window=st["window"], n_traj=st["n_traj"], seed=rc.seed,
                              zero_noise=st["zero_noise"])
    write_stationary(est, rc.out)
    rc.log(f"burn_in={est.burn_in} all_agree={est.all_agree}")
    return EXIT_OK


def cmd_verify_all(rc: RunConfig) -> int:
    from . import verification as V
    scale = V.FULL if rc.config["verify"]["scale"] == "full" else V.QUICK
    res = V.run_all(scale, seed=rc.seed, echo=rc.log)
    write_csv(rc.path("verify_summary.csv"), V.CHECK_COLUMNS, [r.row() for r in res])
    return EXIT_OK if all(r.passed for r in res) else EXIT_NUMERICAL


DISPATCH = {
    "noise-sample": cmd_noise_sample, "simulate": cmd_simulate, "tangent-check": cmd_tangent_check,
    "calibrate-inverse": cmd_calibrate_inverse, "couple-step": cmd_couple_step,
    "mixing-run": cmd_mixing_run, "stationary": cmd_stationary, "verify-all": cmd_verify_all,
}


def run_command(rc: RunConfig) -> int:
    _apply_threads(rc.config)
    try:
        return DISPATCH[rc.command](rc)
    except (BlowUpError, CouplingError, CalibrationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        rc.log(f"numerical guard: {exc}")
        return EXIT_NUMERICAL


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mixforge", description="Coupling-based mixing experiments.")
    p.add_argument("command", help="one of: " + ", ".join(COMMANDS))
    p.add_argument("--config", default=None, help="config file (defaults if omitted)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="mixforge_out")
    p.add_argument("--verbosity", type=int, default=None, help="overrides [run] verbosity")
    p.add_argument("--emit-config", action="store_true", help="write the resolved config to <out>/config.txt")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command not in COMMANDS:
        parser.print_usage(sys.stderr)
        print(f"mixforge: unknown command {args.command!r}; choose from {', '.join(COMMANDS)}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        cfg = load_config(args.config)
        verbosity = cfg["run"]["verbosity"] if args.verbosity is None else args.verbosity
        rc = RunConfig(args.command, args.config, args.seed, args.out, verbosity, cfg)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"mixforge: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if args.emit_config:
        with open(rc.path("config.txt"), "w") as fh:
            fh.write(emit_config(cfg))
    try:
        return run_command(rc)
    except ValueError as exc:
        print(f"mixforge: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
