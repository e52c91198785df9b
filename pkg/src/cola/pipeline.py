"""End-to-end pipeline: dataset selection, processing, sample selection,
and the optional compression harness, driven by one JSON config.

Every run emits a manifest recording stage parameters, derived seeds, and
SHA-256 hashes of all inputs and outputs. The manifest is a pure function of
the config and input files: rerunning the same config byte-reproduces it.
Paths in the config are resolved relative to the config file's directory so
experiment bundles relocate cleanly. On a stage failure all outputs written
so far are removed and the error names the failing stage.
"""

from __future__ import annotations

import glob
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import compression, processing
from .activation_selection import KMeansConfig, ProjectionSpec, select_representatives
from .coverage import HashingEmbedder, concat_datasets, select_datasets as greedy_select_datasets
from .data_model import (
    ActivationMatrix,
    CapabilitySpec,
    CompressionScheme,
    Dataset,
    ensure_tokens,
    load_dataset,
    read_activations,
    save_dataset,
)
from .errors import PipelineError, ValidationError
from .processing import ProcessingConfig
from .seeding import make_rng, stage_seed
from .tokenizer import DEFAULT_VOCAB_SIZE

STAGE1 = "stage1-select-datasets"
STAGE2 = "stage2-process"
STAGE3 = "stage3-select-samples"
STAGE4 = "stage4-evaluate"
COMPARE = "compare"

_STAGE_SEED_NAMES = (STAGE1, STAGE2, "stage3-projection", "stage3-kmeans", "compare-random")


def thread_count() -> int:
    """Parallelism cap from COLA_THREADS (default 1 = sequential)."""
    try:
        return max(1, int(os.environ.get("COLA_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn: Callable, items: Sequence) -> list:
    """Order-preserving map, threaded when COLA_THREADS > 1."""
    n = thread_count()
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


@dataclass(frozen=True)
class PipelineConfig:
    """Parsed pipeline configuration with paths resolved against base_dir."""

    seed: int
    vocab_size: int
    base_dir: Path
    output_dir: Path
    stage1: dict | None
    stage2: dict | None
    stage3: dict | None
    stage4: dict | None
    doc: dict

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        with path.open("r", encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls.from_doc(doc, path.parent)

    @classmethod
    def from_doc(cls, doc: dict, base_dir: str | Path) -> "PipelineConfig":
        base = Path(base_dir)
        for key in doc:
            if key not in ("seed", "vocab_size", "output_dir", "stage1", "stage2", "stage3", "stage4"):
                raise ValidationError(f"unknown config key {key!r}")
        stage3 = doc.get("stage3")
        stage4 = doc.get("stage4")
        if stage4 is not None and stage3 is None:
            raise ValidationError("stage4 requires stage3 (a selection to evaluate)")
        return cls(
            seed=int(doc.get("seed", 0)),
            vocab_size=int(doc.get("vocab_size", DEFAULT_VOCAB_SIZE)),
            base_dir=base,
            output_dir=base / doc.get("output_dir", "out"),
            stage1=doc.get("stage1"),
            stage2=doc.get("stage2"),
            stage3=stage3,
            stage4=stage4,
            doc=doc,
        )

    def resolve(self, rel: str) -> Path:
        return self.base_dir / rel

    def rel(self, path: Path) -> str:
        return os.path.relpath(path, self.base_dir).replace(os.sep, "/")


class _Run:
    """Mutable state carried across stages of one pipeline run."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.written: list[Path] = []
        self.stages: list[dict] = []
        self.selected_pool: list[Dataset] | None = None
        self.processed: Dataset | None = None
        self.candidates: ActivationMatrix | None = None
        self.selection: list[str] | None = None

    def record(self, name: str, seed: int | None, params: dict, inputs: dict, outputs: dict):
        entry = {"name": name, "parameters": params, "inputs": inputs, "outputs": outputs}
        if seed is not None:
            entry["seed"] = seed
        self.stages.append(entry)

    def emit(self, name: str, writer: Callable[[Path], None]) -> Path:
        path = self.cfg.output_dir / name
        writer(path)
        self.written.append(path)
        return path

    def cleanup(self):
        for path in self.written:
            try:
                path.unlink()
            except OSError:
                pass


def _write_json(doc: dict) -> Callable[[Path], None]:
    def writer(path: Path):
        with path.open("w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")

    return writer


def _hash_map(cfg: PipelineConfig, paths: Iterable[Path]) -> dict:
    return {cfg.rel(p): sha256_file(p) for p in paths}


def _stage1(run: _Run):
    cfg = run.cfg
    spec = cfg.stage1
    pool_paths: list[Path] = []
    for pattern in spec["pool"]:
        matches = sorted(glob.glob(str(cfg.resolve(pattern))))
        pool_paths.extend(Path(m) for m in matches)
    if not pool_paths:
        raise ValidationError(f"pool patterns matched no files: {spec['pool']}")
    pool = [ensure_tokens(load_dataset(p), cfg.vocab_size) for p in pool_paths]

    caps = []
    cap_paths = []
    for name in sorted(spec["capabilities"]):
        cap_doc = spec["capabilities"][name]
        ref_path = cfg.resolve(cap_doc["reference_path"])
        cap_paths.append(ref_path)
        ref = ensure_tokens(load_dataset(ref_path), cfg.vocab_size)
        caps.append(CapabilitySpec(name, float(cap_doc["weight"]), ref))

    budget = int(spec.get("budget", len(pool)))
    alpha = float(spec.get("alpha", 0.6))
    kl_mode = spec.get("kl_mode", "exp-neg")
    provider = HashingEmbedder(int(spec.get("embedding_dim", 256)))
    picks = greedy_select_datasets(
        pool, caps, budget, provider, cfg.vocab_size, alpha, kl_mode=kl_mode
    )

    run.selected_pool = [d for d, _ in picks]
    union = concat_datasets(run.selected_pool, "selected")
    report = {
        "selected": [{"name": d.name, "marginal_gain": g} for d, g in picks],
        "alpha": alpha,
        "kl_mode": kl_mode,
        "budget": budget,
    }
    out_report = run.emit("stage1-selection.json", _write_json(report))
    out_union = run.emit("stage1-selected.jsonl", lambda p: save_dataset(union, p))
    run.processed = union
    run.record(
        STAGE1,
        stage_seed(cfg.seed, STAGE1),
        {"budget": budget, "alpha": alpha, "kl_mode": kl_mode,
         "embedding_dim": provider.dim, "capabilities": sorted(spec["capabilities"])},
        _hash_map(cfg, list(pool_paths) + cap_paths),
        _hash_map(cfg, [out_report, out_union]),
    )


def _stage2(run: _Run):
    cfg = run.cfg
    spec = cfg.stage2
    inputs: dict = {}
    if run.processed is None:
        src = cfg.resolve(spec["input"])
        inputs = _hash_map(cfg, [src])
        run.processed = load_dataset(src)

    seed = stage_seed(cfg.seed, STAGE2)
    mix = spec.get("difficulty_mix")
    pcfg = ProcessingConfig(
        target_length=int(spec.get("target_length", 2048)),
        min_length=int(spec.get("min_length", 256)),
        format_policy=spec.get("format_policy", "passthrough"),
        difficulty_mix=None if mix is None else tuple(mix),
        seed=seed,
    )
    d = ensure_tokens(run.processed, cfg.vocab_size)
    d = processing.filter_min_length(d, pcfg)
    if pcfg.format_policy != "passthrough":
        d = Dataset(d.name, tuple(
            processing.wrap_format(s, pcfg.format_policy, cfg.vocab_size) for s in d.samples
        ))
    if spec.get("chunk", False):
        d = processing.chunk_to_length(d, pcfg)
    count = spec.get("mix_count")
    if pcfg.difficulty_mix is not None and count is not None:
        d = processing.stratified_mix(d, pcfg, int(count))

    out = run.emit("stage2-processed.jsonl", lambda p: save_dataset(d, p))
    run.processed = d
    run.record(
        STAGE2,
        seed,
        {"target_length": pcfg.target_length, "min_length": pcfg.min_length,
         "format_policy": pcfg.format_policy, "chunk": bool(spec.get("chunk", False)),
         "difficulty_mix": mix, "mix_count": count},
        inputs,
        _hash_map(cfg, [out]),
    )


def _stage3(run: _Run, write_selection: bool = True):
    cfg = run.cfg
    spec = cfg.stage3
    acts_path = cfg.resolve(spec["activations"])
    acts = read_activations(acts_path)
    if run.processed is not None:
        wanted = set(run.processed.ids)
        keep = [i for i, sid in enumerate(acts.sample_ids) if sid in wanted]
        if not keep:
            raise ValidationError("no activation rows match the processed dataset ids")
        acts = ActivationMatrix(
            tuple(acts.sample_ids[i] for i in keep), acts.layer_dims, acts.data[keep]
        )
    run.candidates = acts

    proj = ProjectionSpec(
        original_dim=acts.total_dim,
        reduced_dim=int(spec.get("reduced_dim", 64)),
        seed=stage_seed(cfg.seed, "stage3-projection"),
    )
    kcfg = KMeansConfig(
        k=int(spec.get("k", 128)),
        max_iters=int(spec.get("max_iters", 300)),
        tol=float(spec.get("tol", 1e-6)),
        n_restarts=int(spec.get("n_restarts", 10)),
        seed=stage_seed(cfg.seed, "stage3-kmeans"),
    )
    result = select_representatives(acts, proj, kcfg)
    run.selection = list(result.selected_ids)

    outputs = {}
    if write_selection:
        out = run.emit(
            "stage3-selection.json",
            lambda p: p.write_text(result.to_json(), encoding="utf-8"),
        )
        outputs = _hash_map(cfg, [out])
    run.record(
        STAGE3,
        kcfg.seed,
        {"k": kcfg.k, "reduced_dim": proj.reduced_dim, "projection_seed": proj.seed,
         "max_iters": kcfg.max_iters, "tol": kcfg.tol, "n_restarts": kcfg.n_restarts,
         "candidates": acts.n_samples},
        _hash_map(cfg, [acts_path]),
        outputs,
    )


def _load_harness_inputs(cfg: PipelineConfig):
    spec = cfg.stage4
    layers_path = cfg.resolve(spec["layers"])
    eval_path = cfg.resolve(spec["eval_activations"])
    layers = compression.read_layer_bank(layers_path)
    eval_acts = read_activations(eval_path)
    scheme = CompressionScheme.from_dict(spec["scheme"])
    return layers, eval_acts, scheme, [layers_path, eval_path]


def _stage4(run: _Run):
    cfg = run.cfg
    layers, eval_acts, scheme, paths = _load_harness_inputs(cfg)
    errors = compression.evaluate_calibration(
        layers, run.candidates, run.selection, scheme, eval_acts
    )
    report = {
        "scheme": scheme.to_dict(),
        "selection_size": len(run.selection),
        "layers": [{"name": n, "error": e} for n, e in errors],
        "mean_error": float(np.mean([e for _, e in errors])),
    }
    out = run.emit("stage4-report.json", _write_json(report))
    run.record(
        STAGE4, None,
        {"scheme": scheme.to_dict()},
        _hash_map(cfg, paths),
        _hash_map(cfg, [out]),
    )


def _execute(run: _Run, stages: list[tuple[str, Callable[[_Run], None]]]) -> None:
    run.cfg.output_dir.mkdir(parents=True, exist_ok=True)
    for name, fn in stages:
        try:
            fn(run)
        except Exception as exc:
            run.cleanup()
            raise PipelineError(name, exc) from exc


def _planned_stages(cfg: PipelineConfig) -> list[tuple[str, Callable[[_Run], None]]]:
    stages: list[tuple[str, Callable[[_Run], None]]] = []
    if cfg.stage1 is not None:
        stages.append((STAGE1, _stage1))
    if cfg.stage2 is not None:
        stages.append((STAGE2, _stage2))
    if cfg.stage3 is not None:
        stages.append((STAGE3, _stage3))
    if cfg.stage4 is not None:
        stages.append((STAGE4, _stage4))
    if not stages:
        raise ValidationError("config defines no stages")
    return stages


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Run all configured stages; returns the manifest (also written to disk).

    Stage 2 applies, in order: minimum-length filter, format wrapping,
    optional chunking, optional stratified mixing. Stage 3 clusters the
    activation rows whose ids survived processing (all rows when stages 1-2
    are not configured).
    """
    run = _Run(cfg)
    _execute(run, _planned_stages(cfg))
    manifest = {"config": cfg.doc, "seed": cfg.seed, "stages": run.stages}
    path = cfg.output_dir / "manifest.json"
    _write_json(manifest)(path)
    return manifest


def compare_selections(cfg: PipelineConfig, trials: int) -> dict:
    """Evaluate the curated selection against uniform random selections.

    Runs the configured stages up to sample selection once, then draws
    `trials` random same-size selections from the same candidate rows and
    scores each with the stage-4 scheme on the held-out evaluation
    activations. A trial is a win when the curated selection's mean
    reconstruction error is at most the random one's.
    """
    if trials < 1:
        raise ValueError(f"trials must be positive, got {trials}")
    if cfg.stage3 is None or cfg.stage4 is None:
        raise ValidationError("compare requires stage3 and stage4 in the config")

    run = _Run(cfg)
    stages = [(n, f) for n, f in _planned_stages(cfg) if n != STAGE4]
    _execute(run, stages)

    try:
        layers, eval_acts, scheme, _ = _load_harness_inputs(cfg)
        acts = run.candidates
        cola_errors = compression.evaluate_calibration(
            layers, acts, run.selection, scheme, eval_acts
        )
        cola_mean = float(np.mean([e for _, e in cola_errors]))
        k = len(run.selection)
        base_seed = stage_seed(cfg.seed, "compare-random")

        def one_trial(t: int):
            rng = make_rng(base_seed, t)
            picks = rng.choice(acts.n_samples, size=k, replace=False)
            ids = [acts.sample_ids[int(i)] for i in picks]
            errs = compression.evaluate_calibration(layers, acts, ids, scheme, eval_acts)
            return [e for _, e in errs]

        random_errors = parallel_map(one_trial, list(range(trials)))
    except Exception as exc:
        run.cleanup()
        raise PipelineError(COMPARE, exc) from exc

    random_means = [float(np.mean(errs)) for errs in random_errors]
    wins = sum(1 for m in random_means if cola_mean <= m)
    per_layer_random = np.mean(np.asarray(random_errors), axis=0)
    report = {
        "trials": trials,
        "k": len(run.selection),
        "scheme": scheme.to_dict(),
        "cola": {
            "mean_error": cola_mean,
            "per_layer": [{"name": n, "error": e} for n, e in cola_errors],
        },
        "random": {
            "mean_error": float(np.mean(random_means)),
            "per_trial_mean": random_means,
            "per_layer_mean": [
                {"name": n, "error": float(e)}
                for (n, _), e in zip(cola_errors, per_layer_random)
            ],
        },
        "wins": wins,
        "win_rate": wins / trials,
    }
    try:
        path = run.emit("compare-report.json", _write_json(report))
    except Exception as exc:
        run.cleanup()
        raise PipelineError(COMPARE, exc) from exc
    return report
