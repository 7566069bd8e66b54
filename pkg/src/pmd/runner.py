"""Experiment orchestration: data ingestion, runs, metric emission and exports.

Every output file is written to a temporary name and renamed into place, so
an interrupted run never leaves a half-written file behind.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy.special import expit

from .config import ExperimentConfig, parse_grid
from .core import record_iterations, run_pmd
from .density import KdeDensity, ParticleCloud, cloud_from_csv
from .diagnostics import (
    auto_grid_axes,
    build_grid_oracle,
    cross_entropy,
    kl_divergence,
    map_estimate,
    predictive_accuracy,
    total_variation,
)
from .exceptions import ConfigError, InvalidDataError
from .model import ConjugateGaussian, Dataset, LogisticRegression, TiedMixture
from .sgld import run_sgld

# --------------------------------------------------------------------------
# data


def load_dataset(path, has_labels: bool = False) -> Dataset:
    """Read a numeric CSV with a header row.

    With ``has_labels`` the final column holds ``{-1, +1}`` labels.  Errors
    name the offending (1-based) line.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidDataError(f"{path}: file is empty") from None
        width = len(header)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise InvalidDataError(
                    f"{path}, line {lineno}: expected {width} columns, found {len(row)}"
                )
            try:
                values = [float(c) for c in row]
            except ValueError:
                raise InvalidDataError(f"{path}, line {lineno}: non-numeric value in {row!r}") from None
            if not all(math.isfinite(v) for v in values):
                raise InvalidDataError(f"{path}, line {lineno}: NaN or Inf value")
            rows.append(values)
    if not rows:
        raise InvalidDataError(f"{path}: no data rows")
    arr = np.array(rows)
    if has_labels:
        if width < 2:
            raise InvalidDataError(f"{path}: labelled data needs at least two columns")
        return Dataset(arr[:, :-1], arr[:, -1])
    return Dataset(arr)


def generate_synthetic(kind: str, params: dict, seed: int, n: int) -> Dataset:
    """Draw ``n`` i.i.d. rows from a forward model at fixed parameters.

    ``params`` holds the model hyper-parameters plus ``theta``, the generating
    parameter vector.  For ``logistic``, ``theta`` may be omitted together
    with ``dim``; weights are then drawn from the prior with the same seed.
    """
    if n < 1:
        raise InvalidDataError(f"cannot generate an empty dataset (n={n})")
    rng = np.random.default_rng(seed)
    theta = params.get("theta")
    if kind == "tied_mixture":
        t1, t2 = (1.0, -2.0) if theta is None else (float(theta[0]), float(theta[1]))
        first = rng.random(n) < params.get("mix_p", 0.5)
        mean = np.where(first, t1, t1 + t2)
        return Dataset(mean + params.get("sigma_x", 2.5) * rng.standard_normal(n))
    if kind == "conjugate_gaussian":
        default = np.zeros(len(params.get("prior_mean", (0.0,))))
        mu = np.atleast_1d(np.asarray(default if theta is None else theta, dtype=float))
        return Dataset(mu + math.sqrt(params.get("obs_var", 1.0)) * rng.standard_normal((n, mu.size)))
    if kind == "logistic":
        if theta is None:
            dim = params.get("dim") or 5
            w = math.sqrt(params.get("prior_var", 1.0)) * rng.standard_normal(int(dim))
        else:
            w = np.asarray(theta, dtype=float)
        x = rng.standard_normal((n, w.size))
        y = np.where(rng.random(n) < expit(x @ w), 1.0, -1.0)
        return Dataset(x, y)
    raise ConfigError(f"unknown synthetic kind {kind!r}")


def build_model(cfg: ExperimentConfig, data: Dataset):
    p = cfg.model_params
    if cfg.model_kind == "tied_mixture":
        return TiedMixture(p["sigma1"], p["sigma2"], p["sigma_x"], p["mix_p"], data)
    if cfg.model_kind == "logistic":
        return LogisticRegression(data, p["prior_var"])
    return ConjugateGaussian(p["prior_mean"], p["prior_var"], p["obs_var"], data)


def prepare_data(cfg: ExperimentConfig):
    """Training data and optional held-out split ``(train, test)``."""
    spec = cfg.data
    if spec.source == "csv":
        data = load_dataset(cfg.resolve(spec.path), spec.has_labels)
    else:
        params = dict(cfg.model_params, theta=spec.theta, dim=spec.dim)
        data = generate_synthetic(cfg.model_kind, params, spec.seed, spec.n)
    holdout = cfg.diagnostics.holdout
    if holdout <= 0:
        return data, None
    order = np.random.default_rng(spec.seed).permutation(data.size)
    n_test = int(round(holdout * data.size))
    if n_test < 1 or n_test >= data.size:
        raise ConfigError(f"holdout {holdout} leaves an empty split of {data.size} rows")
    return data.subset(np.sort(order[n_test:])), data.subset(np.sort(order[:n_test]))


def validate_experiment(cfg: ExperimentConfig):
    """Load data, build the model and algorithm config without running anything."""
    train, test = prepare_data(cfg)
    model = build_model(cfg, train)
    if cfg.algorithm.name == "pmd":
        alg = cfg.pmd_config(train.size)
    else:
        alg = cfg.sgld_config(train.size)
    alg.validate(model, train)
    if cfg.diagnostics.grid != "none" and cfg.diagnostics.grid != "auto":
        axes = parse_grid(cfg.diagnostics.grid)
        if len(axes) != model.dim:
            raise ConfigError(f"grid has {len(axes)} axes but the model has {model.dim} parameters")
    return model, train, test, alg


# --------------------------------------------------------------------------
# outputs


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _state_csv(state) -> str:
    if isinstance(state, KdeDensity):
        # bandwidth and scale travel as a comment so the KDE can be rebuilt
        scale = ";".join(repr(float(v)) for v in state.scale.ravel())
        return f"# bandwidth={state.bandwidth!r} scale={scale}\n" + state.to_csv()
    return state.to_csv()


def load_state(path):
    """Read a ``final_state.csv``: a :class:`KdeDensity` if it carries a
    bandwidth comment, otherwise a :class:`ParticleCloud`."""
    text = Path(path).read_text()
    cloud = cloud_from_csv(text)
    first = text.split("\n", 1)[0]
    if not first.startswith("# bandwidth="):
        return cloud
    fields_ = dict(item.split("=", 1) for item in first[1:].split())
    d = cloud.dim
    scale = np.array([float(v) for v in fields_["scale"].split(";")]).reshape(d, d)
    return KdeDensity(cloud.points, cloud.log_weights, float(fields_["bandwidth"]), scale)


def _curves_csv(rows: list) -> str:
    keys = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


class _Metrics:
    """Per-state metric callback for either grid or predictive diagnostics."""

    def __init__(self, cfg, model, test):
        self.oracle = None
        self.test = test
        self.model = model
        grid = cfg.diagnostics.grid
        if grid != "none" and model.dim <= 2:
            axes = auto_grid_axes(model, n_points=cfg.diagnostics.grid_points) if grid == "auto" else parse_grid(grid)
            self.oracle = build_grid_oracle(model, axes)

    def __call__(self, t, state) -> dict:
        out = {}
        if self.oracle is not None:
            out["tv"] = total_variation(self.oracle, state)
            out["cross_entropy"] = cross_entropy(self.oracle, state)
            out["kl"] = kl_divergence(self.oracle, state)
        if self.test is not None and isinstance(self.model, LogisticRegression):
            out["accuracy"] = predictive_accuracy(self.model, state, self.test.features, self.test.labels)
        return out


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Run one seed and write its outputs; returns the summary dict.

    Files: ``trace.jsonl``, ``final_state.csv``, ``curves.csv``,
    ``summary.json``, plus ``grid.csv`` for grid diagnostics and PNG figures
    unless ``figures = false``.
    """
    out = Path(out_dir or cfg.resolve(cfg.output_dir))
    model, train, test, alg = validate_experiment(cfg)
    metrics = _Metrics(cfg, model, test)
    start = time.perf_counter()

    rows = []
    if cfg.algorithm.name == "pmd":
        trace = run_pmd(alg, model, train, on_record=metrics)
        for rec in trace:
            rows.append(dict(algorithm="pmd", **rec.to_json()))
        final = trace.final
    else:
        result = run_sgld(alg, model, train)
        for t in sorted(record_iterations(alg.iterations, cfg.algorithm.record)):
            kept = max(0, (t - alg.burn_in) // alg.thin)
            if kept < 2:
                continue
            cloud = ParticleCloud(result.chain[:kept], np.zeros(kept))
            row = dict(algorithm="sgld", t=t, gamma=alg.stepsize(t), m=kept, ess=float(kept),
                       data_visited=t * alg.batch_size)
            row.update(metrics(t, cloud))
            rows.append(row)
        final = result.cloud
    elapsed = time.perf_counter() - start

    summary = {
        "algorithm": cfg.algorithm.name,
        "model": cfg.model_kind,
        "seed": cfg.seed,
        "iterations": alg.iterations,
        "data_size": train.size,
        "final": {k: v for k, v in rows[-1].items() if k not in ("algorithm", "t")} if rows else {},
        "wall_clock_seconds": round(elapsed, 3),
    }
    if test is not None and isinstance(model, LogisticRegression):
        w = map_estimate(model)
        summary["final"]["map_accuracy"] = float(np.mean(np.where(test.features @ w >= 0, 1.0, -1.0) == test.labels))

    atomic_write(out / "trace.jsonl", "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))
    atomic_write(out / "curves.csv", _curves_csv(rows))
    atomic_write(out / "final_state.csv", _state_csv(final))
    if metrics.oracle is not None:
        atomic_write(out / "grid.csv", metrics.oracle.to_csv(final))
    atomic_write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if cfg.figures:
        from .plotting import plot_run

        plot_run(out, rows, metrics.oracle, final)
    return summary


def _run_seed(args):
    cfg, out = args
    return run_experiment(cfg, out)


def run_repeated(cfg: ExperimentConfig, repeat: int, out_dir=None, workers: int | None = None) -> list:
    """Run seeds ``seed, seed+1, ...`` concurrently, one subdirectory each."""
    if repeat < 1:
        raise ConfigError("--repeat must be at least 1")
    out = Path(out_dir or cfg.resolve(cfg.output_dir))
    validate_experiment(cfg)  # fail before spawning workers
    jobs = [(cfg.with_seed(cfg.seed + i), out / f"seed_{cfg.seed + i}") for i in range(repeat)]
    if repeat == 1 or workers == 1:
        return [_run_seed(j) for j in jobs]
    workers = workers or min(repeat, os.cpu_count() or 1)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_seed, jobs))


def summarize(directory, figures: bool = True) -> dict:
    """Per-algorithm medians of final metrics over every ``summary.json``
    below ``directory``."""
    directory = Path(directory)
    paths = sorted(directory.rglob("summary.json"))
    if not paths:
        raise FileNotFoundError(f"no summary.json files under {directory}")
    groups = {}
    for p in paths:
        s = json.loads(p.read_text())
        groups.setdefault(s["algorithm"], []).append(s)
    result = {}
    for name, runs in sorted(groups.items()):
        keys = sorted({k for r in runs for k, v in r["final"].items() if isinstance(v, (int, float))})
        per_seed = {k: [r["final"][k] for r in runs if k in r["final"]] for k in keys}
        result[name] = {
            "seeds": sorted(r["seed"] for r in runs),
            "median": {k: float(np.median(v)) for k, v in per_seed.items()},
            "per_seed": per_seed,
        }
    atomic_write(directory / "medians.json", json.dumps(result, indent=2, sort_keys=True) + "\n")
    rows = [dict(algorithm=name, metric=k, median=v, seeds=len(g["seeds"]))
            for name, g in result.items() for k, v in g["median"].items()]
    atomic_write(directory / "medians.csv", _curves_csv(rows))
    if figures:
        from .plotting import plot_summary

        plot_summary(directory, result)
    return result
