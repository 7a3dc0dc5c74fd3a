"""
End-to-end commands behind the CLI.

Each ``cmd_*`` function takes a validated RunConfig, writes its artifacts into
``cfg.output_dir`` and returns an outcome object for the caller to report.
Every CSV is written with 17 significant digits and '\\n' line endings so that
repeated runs are byte-identical.
"""

import itertools
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from config import RunConfig
from evolution import EvolutionResult, evolve, random_baseline
from exceptions import DimensionMismatchError, ExportError, ValidationError
from model_store import StoredModel, load_style_model, save_style_model
from phenotype import (
    LinearEmbedder,
    StyleModel,
    SynthGenerator,
    build_style_model,
    export_pgm,
    generate,
    make_fitness,
    sample_embeddings,
)
from rng import RandomStreams

logger = logging.getLogger(__name__)

MODEL_FILENAME = "style_model.txt"
SWEEP_COLUMNS = ["p_cx", "p_mut", "n_pop", "n_ts"]

TargetMode = Union[str, Sequence[int]]


def ensure_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise ExportError(f"Cannot create output directory: {err}", os.fspath(path)) from err
    return path


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    ensure_dir(path.parent)
    try:
        frame.to_csv(
            path, index=False, float_format="%.17g", lineterminator="\n", na_rep="nan"
        )
    except OSError as err:
        raise ExportError(f"Failed to write CSV: {err}", os.fspath(path)) from err
    logger.info(f"Wrote {len(frame)} row(s) to {path}")
    return path


def _write_latent(latent: np.ndarray, path: Path) -> Path:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.writelines("%.17g\n" % v for v in latent)
    except OSError as err:
        raise ExportError(f"Failed to write latent vector: {err}", os.fspath(path)) from err
    return path


def build_dataset(generator: SynthGenerator, embedder: LinearEmbedder, size: int,
                  seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Regenerate the (latents, embeddings) training set; identical for identical arguments."""
    rng = RandomStreams(seed).stream("dataset")
    latents, embeddings = sample_embeddings(generator, embedder, size, rng)
    logger.info(f"Built dataset of {size} sample(s) with seed {seed}")
    return latents, embeddings


def hard_assignments(style_model: StyleModel, embeddings: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior matrix and argmax component per sample (ties to the lower index)."""
    posteriors = style_model.posteriors(embeddings)
    return posteriors, np.argmax(posteriors, axis=1)


def cluster_sizes(assignments: np.ndarray, n_components: int) -> np.ndarray:
    return np.bincount(assignments, minlength=n_components)


def select_targets(sizes: Sequence[int], mode: TargetMode, count: int = 5) -> List[int]:
    """
    Target styles to search for.

    ``mode == "auto"`` picks the ``count`` largest components by hard-assignment
    size (ties to the lower index, clamped to K); otherwise ``mode`` is an
    explicit list of component indices.
    """
    sizes = np.asarray(sizes)
    n_components = sizes.size
    if isinstance(mode, str):
        if mode != "auto":
            raise ValidationError(f"unknown target mode {mode!r}")
        order = np.lexsort((np.arange(n_components), -sizes))
        return [int(t) for t in order[:min(count, n_components)]]

    targets = [int(t) for t in mode]
    if not targets:
        raise ValidationError("explicit target list is empty")
    bad = [t for t in targets if not 0 <= t < n_components]
    if bad:
        raise ValidationError(f"target(s) {bad} out of range [0, {n_components})")
    return targets


def style_posterior_summary(posteriors: np.ndarray, assignments: np.ndarray) -> pd.DataFrame:
    """Per component: hard-assignment size and the members' own-component posterior quartiles."""
    rows = []
    for k in range(posteriors.shape[1]):
        own = posteriors[assignments == k, k]
        if own.size:
            q25, median, q75 = np.quantile(own, [0.25, 0.5, 0.75])
            mean = own.mean()
        else:
            q25 = median = q75 = mean = np.nan
        rows.append({
            "component": k,
            "size": int(own.size),
            "mean_posterior": float(mean),
            "q25_posterior": float(q25),
            "median_posterior": float(median),
            "q75_posterior": float(q75),
        })
    return pd.DataFrame(rows)


def check_compatible(stored: StoredModel, cfg: RunConfig) -> None:
    """The config's generator and embedder must be the ones the model was fitted with."""
    if stored.generator != cfg.generator:
        raise DimensionMismatchError(
            "generator (model file vs config)", stored.generator.model_dump(), cfg.generator.model_dump()
        )
    if stored.embedder != cfg.embedder:
        raise DimensionMismatchError(
            "embedder (model file vs config)", stored.embedder.model_dump(), cfg.embedder.model_dump()
        )


def _dataset_posteriors(stored: StoredModel) -> np.ndarray:
    generator = stored.generator.build()
    embedder = stored.embedder.build(stored.generator)
    _, embeddings = build_dataset(generator, embedder, stored.dataset_size, stored.dataset_seed)
    return stored.style_model.posteriors(embeddings)


def resolve_target(stored: StoredModel, target: Optional[int]) -> int:
    """An explicit target, validated; otherwise the largest style of the training set."""
    if target is not None:
        if not 0 <= target < stored.style_model.n_styles:
            raise ValidationError(
                f"target {target} out of range [0, {stored.style_model.n_styles})"
            )
        return target
    posteriors = _dataset_posteriors(stored)
    sizes = cluster_sizes(np.argmax(posteriors, axis=1), stored.style_model.n_styles)
    return select_targets(sizes, "auto", 1)[0]


def _load_for(cfg: RunConfig, model_path: Union[str, os.PathLike]) -> StoredModel:
    stored = load_style_model(model_path)
    check_compatible(stored, cfg)
    return stored


@dataclass
class FitOutcome:
    model_path: Path
    clusters_path: Path
    stored: StoredModel
    summary: pd.DataFrame


@dataclass
class EvolveOutcome:
    target: int
    result: EvolutionResult
    csv_path: Path
    pgm_path: Path
    latent_path: Path


@dataclass
class BaselineOutcome:
    target: int
    budget: int
    best_fitness: float
    csv_path: Path
    pgm_path: Path


@dataclass
class SweepOutcome:
    targets: List[int]
    rows: pd.DataFrame
    summary: pd.DataFrame
    csv_path: Path
    summary_path: Path


@dataclass
class ExportOutcome:
    target: int
    ranking: pd.DataFrame
    csv_path: Path
    pgm_paths: List[Path]


def fit_style_model(cfg: RunConfig) -> Tuple[StoredModel, np.ndarray]:
    """Build the dataset and fit scaler, PCA and GMM; returns the model and the training embeddings."""
    generator = cfg.generator.build()
    embedder = cfg.embedder.build(cfg.generator)
    _, embeddings = build_dataset(generator, embedder, cfg.dataset_size, cfg.seed)
    style_model = build_style_model(embeddings, cfg.pca_target_ratio, cfg.gmm_config())
    stored = StoredModel(
        style_model=style_model,
        generator=cfg.generator,
        embedder=cfg.embedder,
        dataset_seed=cfg.seed,
        dataset_size=cfg.dataset_size,
    )
    return stored, embeddings


def cmd_fit(cfg: RunConfig) -> FitOutcome:
    stored, embeddings = fit_style_model(cfg)
    out = Path(cfg.output_dir)
    model_path = save_style_model(stored, out / MODEL_FILENAME)

    posteriors, assignments = hard_assignments(stored.style_model, embeddings)
    summary = style_posterior_summary(posteriors, assignments)
    clusters_path = write_csv(summary, out / "clusters.csv")
    return FitOutcome(model_path=model_path, clusters_path=clusters_path, stored=stored, summary=summary)


def cmd_evolve(cfg: RunConfig, model_path: Union[str, os.PathLike], target: Optional[int] = None,
               workers: int = 1) -> EvolveOutcome:
    stored = _load_for(cfg, model_path)
    t = resolve_target(stored, target)
    generator = cfg.generator.build()
    fitness_fn = make_fitness(stored.style_model, generator, cfg.embedder.build(cfg.generator), t)

    result = evolve(cfg.evolution_config(t), fitness_fn, workers=workers)

    out = Path(cfg.output_dir)
    stats = pd.DataFrame({
        "generation": [s.generation for s in result.stats],
        "max_fitness": result.max_fitness,
        "mean_fitness": result.mean_fitness,
    })
    csv_path = write_csv(stats, out / f"evolve_t{t}.csv")
    pgm_path = out / f"evolve_t{t}_best.pgm"
    export_pgm(generate(generator, result.best_latent), pgm_path)
    latent_path = _write_latent(result.best_latent, out / f"evolve_t{t}_best_latent.txt")
    return EvolveOutcome(
        target=t, result=result, csv_path=csv_path, pgm_path=pgm_path, latent_path=latent_path
    )


def cmd_baseline(cfg: RunConfig, model_path: Union[str, os.PathLike], target: Optional[int] = None,
                 workers: int = 1) -> BaselineOutcome:
    stored = _load_for(cfg, model_path)
    t = resolve_target(stored, target)
    generator = cfg.generator.build()
    fitness_fn = make_fitness(stored.style_model, generator, cfg.embedder.build(cfg.generator), t)

    baseline = random_baseline(cfg.evolution_config(t), fitness_fn, workers=workers)

    out = Path(cfg.output_dir)
    frame = pd.DataFrame({"budget": [baseline.budget], "best_fitness": [baseline.best_fitness]})
    csv_path = write_csv(frame, out / f"baseline_t{t}.csv")
    pgm_path = out / f"baseline_t{t}_best.pgm"
    export_pgm(generate(generator, baseline.best_latent), pgm_path)
    return BaselineOutcome(
        target=t, budget=baseline.budget, best_fitness=baseline.best_fitness,
        csv_path=csv_path, pgm_path=pgm_path,
    )


@dataclass(frozen=True)
class SweepJob:
    p_cx: float
    p_mut: float
    n_pop: int
    n_ts: int
    style: int
    run: int
    seed: int


def sweep_jobs(cfg: RunConfig, targets: Sequence[int]) -> List[SweepJob]:
    """Every grid cell x style x run in grid order, each with its own derived seed."""
    streams = RandomStreams(cfg.seed)
    grid = cfg.sweep
    cells = itertools.product(grid.p_cx, grid.p_mut, grid.pop_size, grid.tournament_size)
    jobs = []
    for cell_index, (p_cx, p_mut, n_pop, n_ts) in enumerate(cells):
        for style in targets:
            for run in range(grid.runs):
                jobs.append(SweepJob(
                    p_cx=p_cx, p_mut=p_mut, n_pop=n_pop, n_ts=n_ts, style=style, run=run,
                    seed=streams.child_seed(cell_index, style, run),
                ))
    return jobs


def cmd_sweep(cfg: RunConfig, model_path: Optional[Union[str, os.PathLike]] = None,
              workers: int = 1) -> SweepOutcome:
    """Run the GA parameter grid over the chosen styles; a model file is fitted when none is given."""
    if model_path is not None:
        stored = _load_for(cfg, model_path)
        posteriors = _dataset_posteriors(stored)
    else:
        stored, embeddings = fit_style_model(cfg)
        posteriors = stored.style_model.posteriors(embeddings)
    sizes = cluster_sizes(np.argmax(posteriors, axis=1), stored.style_model.n_styles)
    targets = select_targets(sizes, cfg.targets, cfg.target_count)

    generator = cfg.generator.build()
    embedder = cfg.embedder.build(cfg.generator)
    fitness_fns = {
        t: make_fitness(stored.style_model, generator, embedder, t) for t in targets
    }
    jobs = sweep_jobs(cfg, targets)
    logger.info(
        f"Sweeping {cfg.sweep.n_cells} cell(s) x {len(targets)} style(s) x {cfg.sweep.runs} run(s)"
    )

    def run_job(job: SweepJob) -> float:
        evo_cfg = cfg.evolution_config(
            job.style, seed=job.seed, p_cx=job.p_cx, p_mut=job.p_mut,
            pop_size=job.n_pop, tournament_size=job.n_ts,
        )
        return evolve(evo_cfg, fitness_fns[job.style]).best_fitness

    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        best = list(tqdm(executor.map(run_job, jobs), total=len(jobs), desc="sweep", unit="run"))

    rows = pd.DataFrame({
        "p_cx": [j.p_cx for j in jobs],
        "p_mut": [j.p_mut for j in jobs],
        "n_pop": [j.n_pop for j in jobs],
        "n_ts": [j.n_ts for j in jobs],
        "style": [j.style for j in jobs],
        "run": [j.run for j in jobs],
        "best_fitness": best,
    })
    summary = (
        rows.groupby(SWEEP_COLUMNS, sort=False)["best_fitness"]
        .mean()
        .reset_index()
        .rename(columns={"best_fitness": "mean_best_fitness"})
    )
    out = Path(cfg.output_dir)
    csv_path = write_csv(rows, out / "sweep.csv")
    summary_path = write_csv(summary, out / "sweep_summary.csv")
    return SweepOutcome(
        targets=targets, rows=rows, summary=summary, csv_path=csv_path, summary_path=summary_path
    )


def cmd_export(model_path: Union[str, os.PathLike], target: Optional[int], count: int,
               output_dir: Union[str, os.PathLike]) -> ExportOutcome:
    """Regenerate the training set from the model's provenance and export the top-``count`` designs."""
    stored = load_style_model(model_path)
    if not 1 <= count <= stored.dataset_size:
        raise ValidationError(f"count must be in [1, {stored.dataset_size}], got {count}")
    t = resolve_target(stored, target)

    generator = stored.generator.build()
    embedder = stored.embedder.build(stored.generator)
    latents, embeddings = build_dataset(generator, embedder, stored.dataset_size, stored.dataset_seed)
    scores = stored.style_model.posteriors(embeddings)[:, t]
    top = np.lexsort((np.arange(scores.size), -scores))[:count]

    out = Path(output_dir)
    ensure_dir(out)
    pgm_paths = []
    for rank, index in enumerate(top, start=1):
        path = out / f"export_t{t}_rank{rank}.pgm"
        export_pgm(generate(generator, latents[index]), path)
        pgm_paths.append(path)

    ranking = pd.DataFrame({
        "rank": np.arange(1, top.size + 1),
        "index": top.astype(np.int64),
        "posterior": scores[top],
    })
    csv_path = write_csv(ranking, out / f"export_t{t}.csv")
    return ExportOutcome(target=t, ranking=ranking, csv_path=csv_path, pgm_paths=pgm_paths)
