"""Named experiments: each validates its config, runs, and writes outputs plus a hashed manifest."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import scipy

from . import __version__
from .config import ExperimentConfig
from .diffusion import GaussianDiffusionOracle
from .estimators import (
    EntropyReport,
    affine_gaussian_mi,
    dataset_sampler,
    entropy_via_scores_report,
    gaussian_rate_curves,
    marginal_sampler,
    minde_mi,
    neural_entropy,
    pair_sampler,
    total_entropy_closed_form,
    total_entropy_path,
    log_density_denoised_means,
)
from .gaussian_model import (
    GaussianDist,
    JointGaussianSpec,
    analytic_mi,
    build_joint_spec,
    marginal_x,
    sample_pairs,
)
from .kelly import (
    BettingGame,
    Channel,
    channel_rate_gain,
    discrete_mi,
    doubling_rate,
    entropy_bits,
    joint_table,
    simulate_wealth,
)
from .nn import NetworkParams
from .samplers import SamplerConfig, analytic_fields, pf_ode_affine_map, pf_ode_cfg
from .training import EpsilonModel, TrainingConfig, train_conditional, train_marginal

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
SUMMARY = "summary.json"


class NumericalFailure(RuntimeError):
    """A module reported a numerical failure (divergence, non-finite values)."""


class ReproducibilityError(RuntimeError):
    """A rerun produced files whose hashes differ from the existing manifest."""


@dataclass
class RunResult:
    experiment: str
    out_dir: Path
    summary: dict
    files: list[Path] = field(default_factory=list)
    manifest: Path | None = None


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class _Outputs:
    def __init__(self, root: Path):
        self.root = root
        self.files: list[Path] = []
        root.mkdir(parents=True, exist_ok=True)

    def path(self, rel: str) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def add(self, *paths: Path) -> None:
        self.files.extend(paths)

    def json(self, rel: str, obj) -> Path:
        p = self.path(rel)
        p.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
        self.add(p)
        return p

    def csv(self, rel: str, header: list[str], rows) -> Path:
        p = self.path(rel)
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        self.add(p)
        return p

    def report(self, rel: str, report: EntropyReport) -> None:
        self.add(*report.save(self.path(rel)))

    def checkpoint(self, rel: str, model: EpsilonModel, extra: dict) -> Path:
        p = self.path(rel)
        model.params.save(p, extra)
        self.add(p)
        self.csv(rel.replace(".npz", "_history.csv"), ["step", "smoothed_loss"], model.history)
        return p


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _spec(cfg: ExperimentConfig, noise_std: float | None = None, dim_y: int | None = None) -> JointGaussianSpec:
    """The experiment's joint Gaussian; ``A`` and ``cov_x`` depend only on the master seed and dims."""
    s = cfg.spec
    return build_joint_spec(s.dim_x, dim_y or s.dim_y, s.noise_std if noise_std is None else noise_std,
                            s.jitter, cfg.stream_seed("data", 0))


def _training_cfg(cfg: ExperimentConfig, *keys: int) -> TrainingConfig:
    return replace(cfg.training, seed=cfg.stream_seed("training", *keys),
                   init_seed=cfg.stream_seed("init", *keys))


def _train_pair(cfg: ExperimentConfig, x, y, sched, keys: tuple, label: str):
    try:
        cond = train_conditional(x, y, sched, _training_cfg(cfg, *keys, 0))
        marg = train_marginal(x, sched, _training_cfg(cfg, *keys, 1))
    except FloatingPointError as exc:
        raise NumericalFailure(f"{label}: {exc}") from exc
    return cond, marg


def _map_cells(fn: Callable, items: list, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(*item) for item in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, *zip(*items)))


def _rel(a: float, b: float) -> float:
    return abs(a - b) / abs(b)


# -- gaussian-entropy ---------------------------------------------------------

def _gaussian_entropy_cell(cfg: ExperimentConfig, index: int, root: str) -> dict:
    noise_std = cfg.gaussian_entropy.noise_stds[index]
    out = _Outputs(Path(root) / f"noise_{noise_std:g}")
    sched = cfg.schedule.build()
    spec = _spec(cfg, noise_std)
    oracle = GaussianDiffusionOracle(spec, sched)
    cond_a, marg_a = analytic_fields(oracle)
    est = cfg.estimator
    steps = est.steps
    seed = lambda *k: cfg.stream_seed("estimation", index, *k)  # noqa: E731

    curves = gaussian_rate_curves(spec, sched, sched.times(steps))
    out.csv("rates_exact.csv", ["s", "conditional", "marginal", "mi"],
            zip(curves["times"], curves["conditional"], curves["marginal"], curves["mi"]))
    minde_a = minde_mi(cond_a, marg_a, sched, pair_sampler(spec), est.analytic_n_mc, seed(0), steps)
    stot_c = total_entropy_path(cond_a, sched, pair_sampler(spec), est.analytic_n_mc, seed(1), steps)
    stot_m = total_entropy_path(marg_a, sched, marginal_sampler(spec), est.analytic_n_mc, seed(2), steps)
    out.report("minde_analytic", minde_a)
    out.report("total_entropy_cond_analytic", stot_c)
    out.report("total_entropy_marg_analytic", stot_m)

    x, y = sample_pairs(spec, cfg.data.n_train, cfg.stream_seed("data", 1, index))
    t0 = time.perf_counter()
    cond_m, marg_m = _train_pair(cfg, x, y, sched, (index,), f"noise_std={noise_std:g}")
    train_seconds = time.perf_counter() - t0
    out.checkpoint("cond.npz", cond_m, {"noise_std": noise_std})
    out.checkpoint("marg.npz", marg_m, {"noise_std": noise_std})
    cond_eps, marg_eps = cond_m.eps_field(True), marg_m.eps_field(False)
    minde_l = minde_mi(cond_eps, marg_eps, sched, pair_sampler(spec), est.n_mc, seed(3), steps)
    snn_c = neural_entropy(cond_eps, sched, pair_sampler(spec), est.n_mc, seed(4), steps)
    snn_m = neural_entropy(marg_eps, sched, marginal_sampler(spec), est.n_mc, seed(5), steps)
    out.report("minde_learned", minde_l)
    out.report("neural_entropy_cond", snn_c)
    out.report("neural_entropy_marg", snn_m)

    mi = analytic_mi(spec)
    stot_c_exact = total_entropy_closed_form(spec, True, sched)
    stot_m_exact = total_entropy_closed_form(spec, False, sched)
    return {
        "noise_std": noise_std,
        "analytic_mi": mi,
        "minde_analytic": minde_a.total,
        "minde_analytic_stderr": minde_a.total_stderr,
        "minde_learned": minde_l.total,
        "minde_learned_stderr": minde_l.total_stderr,
        "minde_learned_rel_error": _rel(minde_l.total, mi),
        "total_entropy_cond_exact": stot_c_exact,
        "total_entropy_marg_exact": stot_m_exact,
        "total_entropy_cond_mc": stot_c.total,
        "total_entropy_marg_mc": stot_m.total,
        "neural_entropy_cond": snn_c.total,
        "neural_entropy_marg": snn_m.total,
        "neural_entropy_difference": snn_c.total - snn_m.total,
        "cond_rate_peak_s": float(curves["times"][np.argmax(curves["conditional"])]),
        "mi_rate_peak_s": float(curves["times"][np.argmax(curves["mi"])]),
        "train_seconds": train_seconds,
        "files": [str(p) for p in out.files],
    }


def run_gaussian_entropy(cfg: ExperimentConfig, out_dir: Path, workers: int = 1):
    items = [(cfg, i, str(out_dir)) for i in range(len(cfg.gaussian_entropy.noise_stds))]
    cells = _map_cells(_gaussian_entropy_cell, items, workers)
    files = [Path(f) for c in cells for f in c.pop("files")]
    timings = {f"{c['noise_std']:g}": c.pop("train_seconds") for c in cells}
    by_mi = sorted(cells, key=lambda c: c["noise_std"])
    summary = {
        "cells": cells,
        "learned_mi_ordered": all(a["minde_learned"] > b["minde_learned"] for a, b in zip(by_mi, by_mi[1:])),
        "cond_rate_peak_ordered": all(a["cond_rate_peak_s"] < b["cond_rate_peak_s"]
                                      for a, b in zip(by_mi, by_mi[1:])),
    }
    return summary, files, {"train_seconds": timings}


# -- cfg-mi -------------------------------------------------------------------

def _cfg_cell(cfg: ExperimentConfig, dim_y: int, w_index: int, root: str) -> dict:
    w = cfg.cfg_mi.weights[w_index]
    label = f"dim_y={dim_y}, w={w:g}"
    out = _Outputs(Path(root) / f"dim_y_{dim_y}" / f"w_{w:g}")
    sched = cfg.schedule.build()
    spec = _spec(cfg, dim_y=dim_y)
    cond_a, marg_a = analytic_fields(GaussianDiffusionOracle(spec, sched))
    samp = lambda k: SamplerConfig(cfg.cfg_mi.sampler_steps, w, cfg.stream_seed("data", dim_y, w_index, k))  # noqa: E731

    def generate(n, k):
        _, y = sample_pairs(spec, n, cfg.stream_seed("data", dim_y, w_index, k + 10))
        try:
            return pf_ode_cfg(cond_a, marg_a, y, sched, samp(k), n), y
        except FloatingPointError as exc:
            raise NumericalFailure(f"{label}: {exc}") from exc

    x, y = generate(cfg.data.n_train, 0)
    x_eval, y_eval = generate(cfg.data.n_eval, 1)
    m_map, n_map = pf_ode_affine_map(cond_a, marg_a, dim_y, sched, samp(0))
    a_min = float(sched.alpha(sched.s_min))
    cond_m, marg_m = _train_pair(cfg, x, y, sched, (dim_y, w_index), label)
    out.checkpoint("cond.npz", cond_m, {"dim_y": dim_y, "w": w})
    out.checkpoint("marg.npz", marg_m, {"dim_y": dim_y, "w": w})
    est = cfg.estimator
    report = minde_mi(cond_m.eps_field(True), marg_m.eps_field(False), sched,
                      dataset_sampler(x_eval, y_eval), est.n_mc,
                      cfg.stream_seed("estimation", dim_y, w_index), est.steps)
    out.report("minde_learned", report)
    return {
        "dim_y": dim_y,
        "w": w,
        "mi_learned": report.total,
        "mi_learned_stderr": report.total_stderr,
        "mi_generated_exact": affine_gaussian_mi(m_map, n_map, spec.cov_y),
        "mi_generated_at_s_min": affine_gaussian_mi(m_map, n_map, spec.cov_y, a_min),
        "analytic_mi": analytic_mi(spec),
        "files": [str(p) for p in out.files],
    }


def run_cfg_mi(cfg: ExperimentConfig, out_dir: Path, workers: int = 1):
    c = cfg.cfg_mi
    items = [(cfg, d, k, str(out_dir)) for d in c.dim_ys for k in range(len(c.weights))]
    cells = _map_cells(_cfg_cell, items, workers)
    out = _Outputs(out_dir)
    files = [Path(f) for cell in cells for f in cell.pop("files")]
    tables = {}
    for d in c.dim_ys:
        rows = sorted((cell for cell in cells if cell["dim_y"] == d), key=lambda r: r["w"])
        keys = ["w", "mi_learned", "mi_learned_stderr", "mi_generated_exact", "mi_generated_at_s_min",
                "analytic_mi"]
        files.append(out.csv(f"mi_vs_w_dim_y_{d}.csv", keys, ([r[k] for k in keys] for r in rows)))
        tables[str(d)] = rows
    summary = {"tables": tables, "checks": cfg_checks(tables)}
    return summary, files, {}


def cfg_checks(tables: dict) -> dict:
    """Ordering and saturation properties of each MI-vs-w table (when the weights are present)."""
    checks = {}
    for d, rows in tables.items():
        mi = {r["w"]: r["mi_learned"] for r in rows}
        entry = {}
        if all(w in mi for w in (0.0, 1.0, 2.0)):
            entry["increasing_0_to_2"] = mi[0.0] < mi[1.0] < mi[2.0]
        if all(w in mi for w in (0.0, 1.0, 5.0, 6.0)):
            entry["saturates"] = (mi[6.0] - mi[5.0]) < (mi[1.0] - mi[0.0])
        if 0.0 in mi:
            base = next(r for r in rows if r["w"] == 0.0)
            entry["w0_rel_error"] = _rel(base["mi_learned"], base["analytic_mi"])
        checks[d] = entry
    return checks


# -- kelly --------------------------------------------------------------------

def _kelly_objects(cfg: ExperimentConfig) -> tuple[BettingGame, Channel | None]:
    k = cfg.kelly
    game = BettingGame(k.n_outcomes, k.odds, None if k.p_true is None else np.asarray(k.p_true),
                       cfg.stream_seed("data", 0) % (2**32))
    channel = {
        "none": lambda: None,
        "identity": lambda: Channel.identity(k.n_outcomes),
        "useless": lambda: Channel.useless(k.n_outcomes),
        "symmetric": lambda: Channel.symmetric(k.n_outcomes, k.flip),
        "matrix": lambda: Channel(np.asarray(k.confusion, dtype=float)),
    }[k.channel]()
    return game, channel


def run_kelly(cfg: ExperimentConfig, out_dir: Path, workers: int = 1):
    game, channel = _kelly_objects(cfg)
    base = doubling_rate(game, game.p_true)
    gain = 0.0 if channel is None else channel_rate_gain(game, channel)
    sim = simulate_wealth(game, channel, cfg.kelly.n_throws, cfg.stream_seed("estimation", 0))
    summary = {
        "analytic_rate": base + gain,
        "no_channel_rate": base,
        "simulated_rate": sim.rate,
        "log2_wealth": sim.log2_wealth,
        "n_throws": sim.n_throws,
        "gain": gain,
        "channel_mi": 0.0 if channel is None else discrete_mi(joint_table(game, channel)),
        "entropy_bits": entropy_bits(game.p_true),
    }
    out = _Outputs(out_dir)
    return summary, [out.json("kelly.json", summary)], {}


# -- train / estimate ---------------------------------------------------------

def run_train(cfg: ExperimentConfig, out_dir: Path, workers: int = 1):
    sched = cfg.schedule.build()
    spec = _spec(cfg)
    x, y = sample_pairs(spec, cfg.data.n_train, cfg.stream_seed("data", 1))
    out = _Outputs(out_dir)
    spec_path = out.path("spec.json")
    spec.save(spec_path)
    out.add(spec_path)
    conditional = cfg.train.model == "conditional"
    try:
        if conditional:
            model = train_conditional(x, y, sched, _training_cfg(cfg, 0))
        else:
            model = train_marginal(x, sched, _training_cfg(cfg, 0))
    except FloatingPointError as exc:
        raise NumericalFailure(str(exc)) from exc
    name = "cond.npz" if conditional else "marg.npz"
    out.checkpoint(name, model, {"model": cfg.train.model, "noise_std": cfg.spec.noise_std})
    summary = {
        "model": cfg.train.model,
        "checkpoint": name,
        "final_smoothed_loss": model.history[-1][1] if model.history else None,
        "num_parameters": model.params.num_parameters(),
    }
    return summary, out.files, {}


def _load_model(path: str, sched, base: Path) -> EpsilonModel:
    p = Path(path)
    if not p.is_absolute() and not p.exists():
        p = base / p
    return EpsilonModel(NetworkParams.load(p), sched)


def run_estimate(cfg: ExperimentConfig, out_dir: Path, workers: int = 1, config_dir: Path | None = None):
    sched = cfg.schedule.build()
    spec = _spec(cfg)
    e, est = cfg.estimate, cfg.estimator
    if e.fields == "analytic":
        cond, marg = analytic_fields(GaussianDiffusionOracle(spec, sched))
        cond_eps = marg_eps = None
        n_mc = est.analytic_n_mc
    else:
        base = config_dir or Path.cwd()
        cm = _load_model(e.cond_checkpoint, sched, base)
        mm = _load_model(e.marg_checkpoint, sched, base)
        if cm.params.data_dim != spec.dim_x or mm.params.data_dim != spec.dim_x:
            raise ValueError("checkpoint data_dim does not match spec.dim_x")
        cond_eps, marg_eps = cm.eps_field(True), mm.eps_field(False)
        cond, marg = cm.score_field(True), mm.score_field(False)
        n_mc = est.n_mc
    out = _Outputs(out_dir)
    seed = lambda k: cfg.stream_seed("estimation", k)  # noqa: E731
    summary: dict = {"fields": e.fields, "analytic_mi": analytic_mi(spec),
                     "total_entropy_cond_exact": total_entropy_closed_form(spec, True, sched),
                     "total_entropy_marg_exact": total_entropy_closed_form(spec, False, sched)}
    if "minde" in e.quantities:
        r = minde_mi(cond, marg, sched, pair_sampler(spec), n_mc, seed(0), est.steps)
        out.report("minde", r)
        summary["minde"] = r.total
        summary["minde_stderr"] = r.total_stderr
    if "total-entropy" in e.quantities:
        for k, (name, f, samp) in enumerate([("cond", cond, pair_sampler(spec)),
                                             ("marg", marg, marginal_sampler(spec))]):
            r = total_entropy_path(f, sched, samp, n_mc, seed(1 + k), est.steps)
            out.report(f"total_entropy_{name}", r)
            summary[f"total_entropy_{name}"] = r.total
    if "neural-entropy" in e.quantities:
        for k, (name, f, samp) in enumerate([("cond", cond_eps, pair_sampler(spec)),
                                             ("marg", marg_eps, marginal_sampler(spec))]):
            r = neural_entropy(f, sched, samp, n_mc, seed(3 + k), est.steps)
            out.report(f"neural_entropy_{name}", r)
            summary[f"neural_entropy_{name}"] = r.total
    if "entropy-via-scores" in e.quantities:
        r, s0 = entropy_via_scores_report(marg, sched, marginal_sampler(spec), n_mc, seed(5), est.steps,
                                          est.n_probes)
        out.report("entropy_via_scores", r)
        summary["entropy_via_scores"] = r.total + s0
        summary["entropy_exact"] = marginal_x(spec).entropy()
    files = list(out.files)
    files.append(out.json("estimate.json", summary))
    return summary, files, {}


# -- logdensity ---------------------------------------------------------------

def gaussian_denoiser(variance: float, sched):
    """Exact ``E[x | x_s]`` for 1-D ``N(0, variance)`` data."""

    def denoise(x_s, s):
        a = float(sched.alpha(s))
        return np.sqrt(a) * variance / (a * variance + 1 - a) * x_s

    return denoise


def run_logdensity(cfg: ExperimentConfig, out_dir: Path, workers: int = 1):
    sched = cfg.schedule.build()
    ld = cfg.logdensity
    xs = ld.grid()
    dist = GaussianDist(np.zeros(1), np.array([[ld.variance]]))
    denoise = gaussian_denoiser(ld.variance, sched)
    seed = cfg.stream_seed("estimation", 0)
    est = np.array([log_density_denoised_means(x, sched, denoise, ld.n_mc, seed, cfg.estimator.steps)
                    for x in xs])
    neg_log_p = -dist.logpdf(xs[:, None])
    slope, intercept = np.polyfit(neg_log_p, est, 1)
    out = _Outputs(out_dir)
    files = [out.csv("logdensity.csv", ["x", "estimate", "neg_log_p"], zip(xs, est, neg_log_p))]
    summary = {"slope": float(slope), "intercept": float(intercept), "n_points": len(xs), "n_mc": ld.n_mc}
    return summary, files, {}


RUNNERS = {
    "gaussian-entropy": run_gaussian_entropy,
    "cfg-mi": run_cfg_mi,
    "kelly": run_kelly,
    "train": run_train,
    "estimate": run_estimate,
    "logdensity": run_logdensity,
}


# -- orchestration ------------------------------------------------------------

def _environment() -> dict:
    return {"diffinfo": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def run_experiment(
    cfg: ExperimentConfig,
    out_dir: str | Path | None = None,
    workers: int = 1,
    config_dir: Path | None = None,
) -> RunResult:
    """Run ``cfg`` and write outputs, ``summary.json`` and ``manifest.json`` under ``out_dir``.

    In reproducibility mode an existing manifest in ``out_dir`` is checked
    against the new file hashes; any difference raises
    :class:`ReproducibilityError` after the new manifest is written.
    """
    root = Path(out_dir if out_dir is not None else cfg.out_dir)
    root.mkdir(parents=True, exist_ok=True)
    manifest_path = root / MANIFEST
    previous = json.loads(manifest_path.read_text())["files"] if manifest_path.exists() else None
    t0 = time.perf_counter()
    runner = RUNNERS[cfg.experiment]
    kwargs = {"config_dir": config_dir} if runner is run_estimate else {}
    try:
        summary, files, timings = runner(cfg, root, workers, **kwargs)
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        raise NumericalFailure(str(exc)) from exc
    out = _Outputs(root)
    config_path = out.path("config.yaml")
    cfg.save(config_path)
    files = [config_path, *files, out.json(SUMMARY, {"experiment": cfg.experiment, **summary})]
    hashes = {str(p.relative_to(root)): sha256_file(p) for p in sorted(set(files))}
    manifest = {
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "reproducible": cfg.reproducible,
        "environment": _environment(),
        "config": cfg.to_dict(),
        "files": hashes,
        "seconds": time.perf_counter() - t0,
        "timings": timings,
    }
    mismatched = []
    if cfg.reproducible and previous is not None:
        mismatched = sorted(k for k, v in hashes.items() if k in previous and previous[k] != v)
        manifest["verified_against_previous"] = not mismatched
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    if mismatched:
        raise ReproducibilityError(f"outputs differ from the previous run: {', '.join(mismatched)}")
    return RunResult(cfg.experiment, root, summary, files, manifest_path)


def verify_manifest(manifest_path: str | Path) -> list[str]:
    """Names of files whose current hash differs from the manifest (missing files included)."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    manifest = json.loads(manifest_path.read_text())
    bad = []
    for rel, digest in manifest["files"].items():
        p = root / rel
        if not p.exists() or sha256_file(p) != digest:
            bad.append(rel)
    return bad


def format_report(manifest_path: str | Path) -> str:
    """Human-readable totals from a run's summary."""
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    summary = json.loads((manifest_path.parent / SUMMARY).read_text())
    lines = [f"experiment: {manifest['experiment']}  seed: {manifest['seed']}",
             f"files: {len(manifest['files'])}  runtime: {manifest['seconds']:.1f}s"]

    def emit(obj, indent=""):
        for k, v in obj.items():
            if isinstance(v, dict):
                lines.append(f"{indent}{k}:")
                emit(v, indent + "  ")
            elif isinstance(v, list) and v and isinstance(v[0], dict):
                for i, item in enumerate(v):
                    lines.append(f"{indent}{k}[{i}]:")
                    emit(item, indent + "  ")
            elif isinstance(v, float):
                lines.append(f"{indent}{k}: {v:.6g}")
            else:
                lines.append(f"{indent}{k}: {v}")

    emit({k: v for k, v in summary.items() if k != "experiment"})
    bad = verify_manifest(manifest_path)
    lines.append("hashes: ok" if not bad else f"hashes: MISMATCH ({', '.join(bad)})")
    return "\n".join(lines)


def cached_run(cfg: ExperimentConfig, out_dir: str | Path, workers: int = 1) -> RunResult:
    """Reuse a finished run in ``out_dir`` if its config is identical and every hash verifies.

    Otherwise run ``cfg`` there from scratch.
    """
    root = Path(out_dir)
    manifest_path = root / MANIFEST
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("config") == cfg.to_dict() and not verify_manifest(manifest_path):
            summary = json.loads((root / SUMMARY).read_text())
            summary.pop("experiment", None)
            return RunResult(cfg.experiment, root, summary, [root / f for f in manifest["files"]],
                             manifest_path)
        manifest_path.unlink()
    return run_experiment(cfg, root, workers)
