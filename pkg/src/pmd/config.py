"""Experiment configuration files.

One INI-style file describes one experiment::

    [model]
    kind = tied_mixture
    sigma1 = 1
    ...

    [data]
    source = synthetic
    n = 1000

    [algorithm]
    name = pmd
    ...

Sections: ``model``, ``data``, ``algorithm``, ``sgld`` (only for
``name = sgld``), ``diagnostics``, ``output`` and ``run``.  Unknown keys are
rejected so typos fail loudly.  :func:`dump_config` writes a parsed config back
out; parsing that text gives an equal :class:`ExperimentConfig`.
"""

from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .core import (
    EtaOverT,
    Fixed,
    Linear,
    PmdConfig,
    Power,
    SwitchAt,
    CappedHarmonic,
    WeightedKde,
    WeightedParticles,
)
from .density import BandwidthRule
from .exceptions import ConfigError
from .sgld import SgldConfig

MODEL_KEYS = {
    "tied_mixture": {"sigma1": 1.0, "sigma2": 1.0, "sigma_x": 2.5, "mix_p": 0.5},
    "logistic": {"prior_var": 1.0},
    "conjugate_gaussian": {"prior_mean": (0.0,), "prior_var": 1.0, "obs_var": 1.0},
}


@dataclass(frozen=True)
class DataSpec:
    source: str = "synthetic"  # synthetic | csv
    path: str | None = None
    has_labels: bool = False
    n: int = 1000
    seed: int = 0
    theta: tuple | None = None  # generating parameters; None draws them (logistic)
    dim: int | None = None  # logistic feature dimension when theta is drawn


@dataclass(frozen=True)
class AlgorithmSpec:
    name: str = "pmd"  # pmd | sgld
    batch_size: int = 10
    iterations: int | None = None
    passes: float | None = None
    sampling: str = "with_replacement"
    record: str = "geometric"
    # pmd
    strategy: str = "kde"  # kde | particles | switch
    switch_at: int | None = None
    switch_after_passes: float | None = None
    step: str = "eta_over_t"  # eta_over_t | capped_harmonic
    eta: float = 1.0
    step_m: float = 10.0
    step_delta: float = 1.0
    particle_step: str | None = None
    particle_eta: float = 1.0
    particles: str = "fixed"  # fixed | linear | power
    m: int = 1000
    exponent: float = 1.0
    beta: float = 2.0
    bandwidth_scale: float | None = None
    standardize: str = "each_step"  # each_step | initial
    # sgld
    step_a: float = 0.01
    step_b: float = 10.0
    step_kappa: float = 0.55
    burn_in: int = 100
    thin: int = 1


@dataclass(frozen=True)
class DiagnosticsSpec:
    grid: str = "auto"  # auto | none | "lo:hi:n, lo:hi:n"
    grid_points: int = 200
    holdout: float = 0.0


@dataclass(frozen=True)
class ExperimentConfig:
    model_kind: str
    model_params: dict
    data: DataSpec = DataSpec()
    algorithm: AlgorithmSpec = AlgorithmSpec()
    diagnostics: DiagnosticsSpec = DiagnosticsSpec()
    output_dir: str = "runs/out"
    figures: bool = True
    seed: int = 0
    base_dir: str = field(default=".", compare=False)

    def resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=int(seed))

    def iterations(self, n: int) -> int:
        """Iteration count from ``iterations`` or ``passes`` over ``n`` rows."""
        alg = self.algorithm
        if alg.iterations is not None:
            return alg.iterations
        return max(1, math.ceil(alg.passes * n / alg.batch_size))

    def pmd_config(self, n: int) -> PmdConfig:
        alg = self.algorithm
        T = self.iterations(n)
        if alg.strategy == "kde":
            strategy = WeightedKde()
        elif alg.strategy == "particles":
            strategy = WeightedParticles()
        else:
            t_switch = alg.switch_at
            if t_switch is None:
                t_switch = math.ceil(alg.switch_after_passes * n / alg.batch_size) + 1
            strategy = SwitchAt(min(t_switch, T))
        particles = {
            "fixed": lambda: Fixed(alg.m),
            "linear": lambda: Linear(alg.m),
            "power": lambda: Power(alg.m, alg.exponent),
        }[alg.particles]()
        return PmdConfig(
            strategy=strategy,
            batch_size=alg.batch_size,
            iterations=T,
            step=_schedule(alg.step, alg.eta, alg),
            particles=particles,
            particle_step=None if alg.particle_step is None else _schedule(alg.particle_step, alg.particle_eta, alg),
            bandwidth_rule=BandwidthRule(beta=alg.beta, scale=alg.bandwidth_scale),
            rng_seed=self.seed,
            sampling=alg.sampling,
            record=alg.record,
            standardize=alg.standardize,
        )

    def sgld_config(self, n: int) -> SgldConfig:
        alg = self.algorithm
        return SgldConfig(
            step_a=alg.step_a,
            step_b=alg.step_b,
            step_kappa=alg.step_kappa,
            batch_size=alg.batch_size,
            iterations=self.iterations(n),
            burn_in=alg.burn_in,
            thin=alg.thin,
            rng_seed=self.seed,
            sampling=alg.sampling,
        )


def _schedule(kind, eta, alg):
    if kind == "eta_over_t":
        return EtaOverT(eta)
    return CappedHarmonic(M=alg.step_m, delta=alg.step_delta, beta=alg.beta)


# --------------------------------------------------------------------------
# parsing


def _parse_bool(key, text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}")


def _parse_floats(key, text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated numbers, got {text!r}") from None


def _coerce(cls, section: str, raw: dict):
    """Build dataclass ``cls`` from string values, typed by its defaults."""
    known = {f.name: f for f in fields(cls)}
    out = {}
    for key, text in raw.items():
        if key not in known:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        default = known[key].default
        ann = str(known[key].type)
        try:
            if ann.startswith("bool"):
                out[key] = _parse_bool(key, text)
            elif ann.startswith("int"):
                out[key] = int(text)
            elif ann.startswith("float"):
                out[key] = float(text)
            elif ann.startswith("tuple"):
                out[key] = _parse_floats(key, text)
            elif isinstance(default, bool):
                out[key] = _parse_bool(key, text)
            else:
                out[key] = text.strip()
        except ValueError:
            raise ConfigError(f"[{section}] {key}: cannot parse {text!r} as {ann}") from None
    return cls(**out)


def _check(cfg: ExperimentConfig) -> None:
    alg, data, diag = cfg.algorithm, cfg.data, cfg.diagnostics
    if alg.name not in ("pmd", "sgld"):
        raise ConfigError(f"[algorithm] name must be pmd or sgld, got {alg.name!r}")
    if (alg.iterations is None) == (alg.passes is None):
        raise ConfigError("[algorithm] give exactly one of iterations or passes")
    if alg.passes is not None and alg.passes <= 0:
        raise ConfigError("[algorithm] passes must be positive")
    if alg.strategy not in ("kde", "particles", "switch"):
        raise ConfigError(f"[algorithm] unknown strategy {alg.strategy!r}")
    if alg.strategy == "switch" and (alg.switch_at is None) == (alg.switch_after_passes is None):
        raise ConfigError("[algorithm] switch strategy needs exactly one of switch_at or switch_after_passes")
    for key in ("step", "particle_step"):
        val = getattr(alg, key)
        if val is not None and val not in ("eta_over_t", "capped_harmonic"):
            raise ConfigError(f"[algorithm] {key} must be eta_over_t or capped_harmonic, got {val!r}")
    if alg.standardize not in ("each_step", "initial"):
        raise ConfigError(f"[algorithm] standardize must be each_step or initial, got {alg.standardize!r}")
    if alg.particles not in ("fixed", "linear", "power"):
        raise ConfigError(f"[algorithm] unknown particle schedule {alg.particles!r}")
    if data.source not in ("synthetic", "csv"):
        raise ConfigError(f"[data] source must be synthetic or csv, got {data.source!r}")
    if data.source == "csv":
        if data.path is None:
            raise ConfigError("[data] csv source needs a path")
        if not os.path.exists(cfg.resolve(data.path)):
            raise ConfigError(f"[data] path does not exist: {cfg.resolve(data.path)}")
    if not 0.0 <= diag.holdout < 1.0:
        raise ConfigError("[diagnostics] holdout must lie in [0, 1)")
    if diag.grid not in ("auto", "none"):
        parse_grid(diag.grid)


def parse_grid(text: str) -> tuple:
    """``"lo:hi:n, lo:hi:n"`` to axes ``((lo, hi, n), ...)``."""
    axes = []
    for part in text.split(","):
        bits = part.strip().split(":")
        if len(bits) != 3:
            raise ConfigError(f"[diagnostics] grid axis must be lo:hi:n, got {part.strip()!r}")
        try:
            lo, hi, n = float(bits[0]), float(bits[1]), int(bits[2])
        except ValueError:
            raise ConfigError(f"[diagnostics] bad grid axis {part.strip()!r}") from None
        if not hi > lo or n < 2:
            raise ConfigError(f"[diagnostics] empty grid axis {part.strip()!r}")
        axes.append((lo, hi, n))
    return tuple(axes)


def parse_config(text: str, base_dir: str = ".") -> ExperimentConfig:
    """Parse config text.  Raises :class:`ConfigError` on any problem."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    allowed = {"model", "data", "algorithm", "sgld", "diagnostics", "output", "run"}
    extra = set(parser.sections()) - allowed
    if extra:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(extra))}")
    if not parser.has_section("model"):
        raise ConfigError("missing [model] section")

    model_raw = dict(parser["model"])
    kind = model_raw.pop("kind", None)
    if kind not in MODEL_KEYS:
        raise ConfigError(f"[model] kind must be one of {sorted(MODEL_KEYS)}, got {kind!r}")
    params = dict(MODEL_KEYS[kind])
    for key, text in model_raw.items():
        if key not in params:
            raise ConfigError(f"[model] unknown key {key!r} for {kind}")
        params[key] = _parse_floats(key, text) if isinstance(params[key], tuple) else float(text)

    def section(name):
        return dict(parser[name]) if parser.has_section(name) else {}

    alg_raw = section("algorithm")
    alg_raw.update(section("sgld"))
    out_raw, run_raw = section("output"), section("run")
    unknown = (set(out_raw) - {"dir", "figures"}) | (set(run_raw) - {"seed"})
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in [output]/[run]")
    try:
        seed = int(run_raw.get("seed", "0"))
    except ValueError:
        raise ConfigError(f"[run] seed must be an integer, got {run_raw['seed']!r}") from None
    cfg = ExperimentConfig(
        model_kind=kind,
        model_params=params,
        data=_coerce(DataSpec, "data", section("data")),
        algorithm=_coerce(AlgorithmSpec, "algorithm", alg_raw),
        diagnostics=_coerce(DiagnosticsSpec, "diagnostics", section("diagnostics")),
        output_dir=out_raw.get("dir", "runs/out"),
        figures=_parse_bool("figures", out_raw.get("figures", "true")),
        seed=seed,
        base_dir=base_dir,
    )
    _check(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), base_dir=str(path.parent))


_SGLD_KEYS = ("step_a", "step_b", "step_kappa", "burn_in", "thin")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(cfg: ExperimentConfig) -> str:
    """Serialise a config; ``parse_config(dump_config(c)) == c``."""
    lines = ["[model]", f"kind = {cfg.model_kind}"]
    lines += [f"{k} = {_fmt(v)}" for k, v in cfg.model_params.items()]

    def block(name, obj, keys):
        out = ["", f"[{name}]"]
        for key in keys:
            val = getattr(obj, key)
            if val is not None:
                out.append(f"{key} = {_fmt(val)}")
        return out

    lines += block("data", cfg.data, [f.name for f in fields(DataSpec)])
    alg_keys = [f.name for f in fields(AlgorithmSpec) if f.name not in _SGLD_KEYS]
    lines += block("algorithm", cfg.algorithm, alg_keys)
    lines += block("sgld", cfg.algorithm, _SGLD_KEYS)
    lines += block("diagnostics", cfg.diagnostics, [f.name for f in fields(DiagnosticsSpec)])
    lines += ["", "[output]", f"dir = {cfg.output_dir}", f"figures = {_fmt(cfg.figures)}"]
    lines += ["", "[run]", f"seed = {cfg.seed}", ""]
    return "\n".join(lines)
