"""Command-line experiment runner.

    electsim run --family complete --n 1024 --protocol alg1 --trials 1000 --seed 42
    electsim mix --family hypercube --dim 6
    electsim oracle --n 20 --s 5

Exit codes: 0 ok, 2 configuration error, 3 model violation, 4 protocol
invariant violation.
"""

from __future__ import annotations

import argparse
import logging
import sys
from math import comb
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import seeding
from .analysis import collision_mc, estimate_success, no_common_referee_exact, trial_seed
from .engine import ModelConfig, dumps_trace, run
from .errors import (
    ConfigError,
    ConvergenceFailureError,
    ElectionError,
    GenerationFailureError,
    InvalidSizeError,
    ModelViolationError,
    NoConvergenceError,
    PreconditionError,
    ProtocolInvariantError,
    RunawayError,
)
from .protocols import make_protocol
from .topology import assign_random_ports, dumps_topology, make_family, mixing_time, verify_mixing

log = logging.getLogger("electsim")

EXIT_OK, EXIT_CONFIG, EXIT_MODEL, EXIT_INVARIANT = 0, 2, 3, 4

FAMILIES = ("complete", "hypercube", "cycle", "random-regular")
PROTOCOLS = ("alg1", "alg2", "naive")


@dataclass(frozen=True)
class ExperimentConfig:
    family: str
    protocol: str = "alg1"
    n: int | None = None
    dim: int | None = None
    d: int | None = None
    model: str = "congest"
    c: int = 8
    trials: int = 1
    seed: int = 0
    tau_multiplier: float = 1.0
    workers: int = 1
    output: str | None = None
    csv: str | None = None
    dump_topology: str | None = None
    dump_trace: str | None = None

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise ConfigError("family", f"must be one of {', '.join(FAMILIES)}")
        if self.protocol not in PROTOCOLS:
            raise ConfigError("protocol", f"must be one of {', '.join(PROTOCOLS)}")
        if self.protocol == "alg1" and self.family != "complete":
            raise ConfigError("protocol", "alg1 runs on complete networks only")
        if self.model not in ("congest", "local"):
            raise ConfigError("model", "must be congest or local")
        _require_family_params(self)
        for name in ("c", "trials", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be positive")
        if self.seed < 0:
            raise ConfigError("seed", "must be non-negative")
        if not self.tau_multiplier > 0:
            raise ConfigError("tau_multiplier", "must be positive")


def _require_family_params(cfg) -> None:
    need = {"complete": ("n",), "cycle": ("n",), "hypercube": ("dim",),
            "random-regular": ("n", "d")}[cfg.family]
    for name in need:
        value = getattr(cfg, name)
        if value is None:
            raise ConfigError(name, f"required for family {cfg.family}")
        if value < 1:
            raise ConfigError(name, "must be positive")


def read_config_file(path: str) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment; keys use flag names."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("config", f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _build_topology(cfg, graph_seed: int):
    topo = make_family(cfg.family, n=cfg.n, dim=cfg.dim, d=cfg.d, seed=graph_seed)
    return assign_random_ports(topo, seeding.derive_seed(cfg.seed, seeding.PORTS))


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_run(cfg: ExperimentConfig):
    cfg.validate()
    topo = _build_topology(cfg, seeding.derive_seed(cfg.seed, seeding.GRAPH))
    protocol = make_protocol(cfg.protocol, topo, tau_multiplier=cfg.tau_multiplier)
    model = ModelConfig(model=cfg.model.upper(), c=cfg.c)
    if cfg.dump_topology:
        _write(cfg.dump_topology, dumps_topology(topo))
    if cfg.dump_trace:
        _write(cfg.dump_trace, dumps_trace(run(topo, protocol, model, trial_seed(cfg.seed, 0))))
    log.info("running %d trials of %s on %s (n=%d)", cfg.trials, cfg.protocol, topo.family, topo.n)
    report = estimate_success(topo, protocol, model, cfg.trials, cfg.seed, workers=cfg.workers)
    _write(cfg.output, report.to_text())
    if cfg.csv:
        _write(cfg.csv, report.to_csv())
    return report


def cmd_mix(family: str, n=None, dim=None, d=None, seed: int = 0, plain: bool = False):
    """Print the mixing time and its independent re-check; returns ``(tau, ok)``."""
    cfg = argparse.Namespace(family=family, n=n, dim=dim, d=d)
    if family not in FAMILIES:
        raise ConfigError("family", f"must be one of {', '.join(FAMILIES)}")
    _require_family_params(cfg)
    topo = make_family(family, n=n, dim=dim, d=d, seed=seed)
    if plain:
        topo = replace(topo, lazy=False)
    profile = mixing_time(topo)
    tau = profile.mixing_time
    ok = verify_mixing(topo, tau) and (tau == 0 or not verify_mixing(topo, tau - 1))
    print(f"family={family} n={topo.n} lazy={topo.lazy} tau={tau} verified={ok}")
    return tau, ok


def _parse_distribution(text: str) -> np.ndarray:
    return np.array([float(x) for x in text.split(",")])


def cmd_oracle(n=None, s=None, distribution=None, uniform=None, skew=None,
               rho=None, trials=100_000, seed=0):
    """Exact no-common-referee probability, or Monte-Carlo no-collision frequencies."""
    if s is not None:
        if n is None:
            raise ConfigError("n", "required with --s")
        value = no_common_referee_exact(n, s)
        raw = f"{comb(n - s, s)}/{comb(n, s)}"
        print(f"no_common_referee n={n} s={s}: C({n - s},{s})/C({n},{s}) = {raw} "
              f"= {value.numerator}/{value.denominator} = {float(value):.6f}")
        return {"exact": value}
    if rho is None:
        raise ConfigError("rho", "required for Monte-Carlo collision estimates")
    results = {}
    if distribution is not None:
        est = collision_mc(_parse_distribution(distribution), rho, trials, seed)
        print(f"distribution no_collision={est.frequency:.6f} stderr={est.stderr:.6f}")
        results["distribution"] = est
    if uniform is not None:
        flat = np.full(uniform, 1.0 / uniform)
        est_u = collision_mc(flat, rho, trials, seed)
        print(f"uniform n={uniform} no_collision={est_u.frequency:.6f} stderr={est_u.stderr:.6f}")
        results["uniform"] = est_u
        if skew is not None:
            skewed = np.full(uniform, (1 - skew) / (uniform - 1))
            skewed[0] = skew
            est_s = collision_mc(skewed, rho, trials, seed + 1)
            gap = est_u.frequency - est_s.frequency
            se = (est_u.stderr**2 + est_s.stderr**2) ** 0.5
            direction = "uniform >= skewed" if gap >= 0 else "uniform < skewed"
            z = gap / se if se > 0 else float("inf")
            print(f"skew={skew} no_collision={est_s.frequency:.6f} stderr={est_s.stderr:.6f}")
            print(f"dominance: {direction} (gap {gap:.6f}, {z:.1f} standard errors)")
            results["skewed"] = est_s
    if not results:
        raise ConfigError("distribution", "give --s, --distribution or --uniform")
    return results


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="electsim", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    # Unset flags stay out of the namespace so config-file values can fill them.
    p = sub.add_parser("run", help="run seeded election trials and write a report",
                       argument_default=argparse.SUPPRESS)
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--family", choices=FAMILIES)
    p.add_argument("--n", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--protocol")
    p.add_argument("--model", type=str.lower)
    p.add_argument("--c", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--tau-multiplier", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--output", help="report path (default stdout)")
    p.add_argument("--csv", help="per-trial table path")
    p.add_argument("--dump-topology", help="write the canonical topology here")
    p.add_argument("--dump-trace", help="write the trace of trial 0 here")

    m = sub.add_parser("mix", help="compute and verify the mixing time")
    m.add_argument("--family", required=True, choices=FAMILIES)
    m.add_argument("--n", type=int)
    m.add_argument("--dim", type=int)
    m.add_argument("--d", type=int)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--plain", action="store_true", help="disable lazy walks")

    o = sub.add_parser("oracle", help="birthday-paradox collision oracles")
    o.add_argument("--n", type=int)
    o.add_argument("--s", type=int)
    o.add_argument("--distribution", help="comma-separated bin probabilities")
    o.add_argument("--uniform", type=int, help="number of bins of a uniform distribution")
    o.add_argument("--skew", type=float, help="mass on bin 0 for the skewed comparison")
    o.add_argument("--rho", type=int)
    o.add_argument("--trials", type=int, default=100_000)
    o.add_argument("--seed", type=int, default=0)
    return parser


_RUN_FIELDS = set(ExperimentConfig.__dataclass_fields__)
_INT_FIELDS = {"n", "dim", "d", "c", "trials", "seed", "workers"}


def _run_config(args) -> ExperimentConfig:
    values = {}
    config_path = getattr(args, "config", None)
    if config_path:
        for key, raw in read_config_file(config_path).items():
            if key not in _RUN_FIELDS:
                raise ConfigError(key, "unknown config key")
            try:
                if key in _INT_FIELDS:
                    values[key] = int(raw)
                elif key == "tau_multiplier":
                    values[key] = float(raw)
                else:
                    values[key] = raw
            except ValueError:
                raise ConfigError(key, f"bad value {raw!r}") from None
    values.update((k, v) for k, v in vars(args).items() if k in _RUN_FIELDS)
    if "family" not in values:
        raise ConfigError("family", "required")
    if "model" in values:
        values["model"] = values["model"].lower()
    return ExperimentConfig(**values)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            cmd_run(_run_config(args))
        elif args.command == "mix":
            cmd_mix(args.family, args.n, args.dim, args.d, args.seed, args.plain)
        else:
            cmd_oracle(args.n, args.s, args.distribution, args.uniform, args.skew,
                       args.rho, args.trials, args.seed)
    except (ConfigError, InvalidSizeError, PreconditionError, GenerationFailureError,
            NoConvergenceError, ConvergenceFailureError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (ModelViolationError, RunawayError) as err:
        print(f"model violation: {err}", file=sys.stderr)
        return EXIT_MODEL
    except ProtocolInvariantError as err:
        print(f"protocol invariant violated: {err}", file=sys.stderr)
        return EXIT_INVARIANT
    except ElectionError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
