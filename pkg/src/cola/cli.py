"""Command-line interface.

`cola run` / `cola compare` drive the whole pipeline from one config file;
the remaining subcommands expose each stage standalone. Errors exit nonzero
with a stage-tagged message on stderr.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import compression, coverage, processing, spectral, synthetic
from .activation_selection import KMeansConfig, ProjectionSpec, select_representatives
from .data_model import (
    CapabilitySpec,
    CompressionScheme,
    Dataset,
    SelectionResult,
    ensure_tokens,
    load_dataset,
    read_activations,
    save_dataset,
    write_activations,
)
from .errors import PipelineError
from .pipeline import PipelineConfig, compare_selections, run_pipeline, stage_seed
from .processing import ProcessingConfig
from .tokenizer import DEFAULT_VOCAB_SIZE


def _fail(stage: str, exc: Exception) -> None:
    click.echo(f"error in {stage}: {exc}", err=True)
    sys.exit(1)


def _dump_json(doc, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


@click.group()
def main():
    """Calibration data curation and compression harness toolkit."""


@main.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def run_cmd(config_path: str):
    """Run all configured pipeline stages and write the manifest."""
    try:
        cfg = PipelineConfig.load(config_path)
        manifest = run_pipeline(cfg)
    except PipelineError as exc:
        _fail(exc.stage, exc.cause)
    except Exception as exc:
        _fail("config", exc)
    click.echo(f"wrote {cfg.output_dir / 'manifest.json'} ({len(manifest['stages'])} stages)")


@main.command("compare")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--trials", default=20, show_default=True, type=click.IntRange(min=1))
def compare_cmd(config_path: str, trials: int):
    """Compare the curated selection against random selections."""
    try:
        cfg = PipelineConfig.load(config_path)
        report = compare_selections(cfg, trials)
    except PipelineError as exc:
        _fail(exc.stage, exc.cause)
    except Exception as exc:
        _fail("config", exc)
    click.echo(
        f"curated mean error {report['cola']['mean_error']:.4f} vs random "
        f"{report['random']['mean_error']:.4f}; wins {report['wins']}/{trials} "
        f"(rate {report['win_rate']:.2f})"
    )


@main.command("select-datasets")
@click.option("--pool", multiple=True, required=True, help="Dataset JSONL paths or globs.")
@click.option("--capabilities", "caps_path", required=True, type=click.Path(exists=True))
@click.option("--budget", required=True, type=click.IntRange(min=1))
@click.option("--alpha", default=0.6, show_default=True, type=click.FloatRange(0.0, 1.0))
@click.option("--kl-mode", default="exp-neg", show_default=True,
              type=click.Choice(["exp-neg", "raw"]))
@click.option("--vocab-size", default=DEFAULT_VOCAB_SIZE, show_default=True, type=int)
@click.option("--embedding-dim", default=256, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
def select_datasets_cmd(pool, caps_path, budget, alpha, kl_mode, vocab_size, embedding_dim, out_path):
    """Greedy capability-coverage selection over a pool of datasets."""
    import glob as globlib

    try:
        paths: list[str] = []
        for pattern in pool:
            matches = sorted(globlib.glob(pattern))
            paths.extend(matches if matches else [pattern])
        datasets = [ensure_tokens(load_dataset(p), vocab_size) for p in paths]
        with open(caps_path, "r", encoding="utf-8") as fh:
            caps_doc = json.load(fh)
        caps = [
            CapabilitySpec(
                name,
                float(caps_doc[name]["weight"]),
                ensure_tokens(load_dataset(caps_doc[name]["reference_path"]), vocab_size),
            )
            for name in sorted(caps_doc)
        ]
        provider = coverage.HashingEmbedder(embedding_dim)
        picks = coverage.select_datasets(
            datasets, caps, budget, provider, vocab_size, alpha, kl_mode=kl_mode
        )
        _dump_json(
            {"selected": [{"name": d.name, "marginal_gain": g} for d, g in picks]}, out_path
        )
    except Exception as exc:
        _fail("select-datasets", exc)
    click.echo(f"selected {budget} dataset(s) -> {out_path}")


@main.command("process")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--target-length", default=2048, show_default=True, type=int,
              help="Chunk window size in tokens; 0 disables chunking.")
@click.option("--min-length", default=256, show_default=True, type=click.IntRange(min=0))
@click.option("--format", "format_policy", default="passthrough", show_default=True,
              type=click.Choice(["passthrough", "wrap-qa"]))
@click.option("--mix", default=None, help="Difficulty mix as easy,medium,hard fractions.")
@click.option("--count", default=None, type=click.IntRange(min=1),
              help="Output size for the stratified mix.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--vocab-size", default=DEFAULT_VOCAB_SIZE, show_default=True, type=int)
def process_cmd(in_path, out_path, target_length, min_length, format_policy, mix, count, seed, vocab_size):
    """Filter, wrap, chunk, and stratify one dataset."""
    try:
        mix_tuple = None
        if mix is not None:
            parts = [float(x) for x in mix.split(",")]
            if len(parts) != 3:
                raise ValueError("--mix needs three comma-separated fractions")
            mix_tuple = tuple(parts)
        policy = format_policy.replace("-", "_")
        pcfg = ProcessingConfig(
            target_length=target_length if target_length > 0 else max(min_length, 1),
            min_length=min_length,
            format_policy=policy,
            difficulty_mix=mix_tuple,
            seed=seed,
        )
        d = ensure_tokens(load_dataset(in_path), vocab_size)
        d = processing.filter_min_length(d, pcfg)
        if policy != "passthrough":
            d = Dataset(d.name, tuple(
                processing.wrap_format(s, policy, vocab_size) for s in d.samples
            ))
        if target_length > 0:
            d = processing.chunk_to_length(d, pcfg)
        if mix_tuple is not None and count is not None:
            d = processing.stratified_mix(d, pcfg, count)
        save_dataset(d, out_path)
    except Exception as exc:
        _fail("process", exc)
    click.echo(f"wrote {len(d)} samples -> {out_path}")


@main.command("select-samples")
@click.option("--activations", "acts_path", required=True, type=click.Path(exists=True))
@click.option("--k", default=128, show_default=True, type=click.IntRange(min=1))
@click.option("--dim", default=64, show_default=True, type=click.IntRange(min=1))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--restarts", default=10, show_default=True, type=click.IntRange(min=1))
@click.option("--out", "out_path", required=True, type=click.Path())
def select_samples_cmd(acts_path, k, dim, seed, restarts, out_path):
    """Cluster activation signatures and pick centroid-nearest samples."""
    try:
        acts = read_activations(acts_path)
        proj = ProjectionSpec(acts.total_dim, dim, seed=stage_seed(seed, "stage3-projection"))
        kcfg = KMeansConfig(k=k, n_restarts=restarts, seed=stage_seed(seed, "stage3-kmeans"))
        result = select_representatives(acts, proj, kcfg)
        Path(out_path).write_text(result.to_json(), encoding="utf-8")
    except Exception as exc:
        _fail("select-samples", exc)
    click.echo(f"selected {len(result.selected_ids)} samples -> {out_path}")


@main.command("harness")
@click.option("--layers", "layers_path", required=True, type=click.Path(exists=True))
@click.option("--acts", "acts_path", required=True, type=click.Path(exists=True))
@click.option("--selection", "selection_path", required=True, type=click.Path(exists=True))
@click.option("--scheme", "scheme_path", required=True, type=click.Path(exists=True))
@click.option("--eval", "eval_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def harness_cmd(layers_path, acts_path, selection_path, scheme_path, eval_path, out_path):
    """Compress layers on selected samples, score on held-out activations."""
    try:
        layers = compression.read_layer_bank(layers_path)
        acts = read_activations(acts_path)
        selection = SelectionResult.from_json(
            Path(selection_path).read_text(encoding="utf-8")
        ).selected_ids
        with open(scheme_path, "r", encoding="utf-8") as fh:
            scheme = CompressionScheme.from_dict(json.load(fh))
        eval_acts = read_activations(eval_path)
        errors = compression.evaluate_calibration(layers, acts, selection, scheme, eval_acts)
        _dump_json(
            {
                "scheme": scheme.to_dict(),
                "selection_size": len(selection),
                "layers": [{"name": n, "error": e} for n, e in errors],
                "mean_error": float(np.mean([e for _, e in errors])),
            },
            out_path,
        )
    except Exception as exc:
        _fail("harness", exc)
    click.echo(f"evaluated {len(errors)} layers -> {out_path}")


@main.command("spectrum")
@click.option("--original", "original_path", required=True, type=click.Path(exists=True))
@click.option("--compressed", "compressed_path", default=None, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def spectrum_cmd(original_path, compressed_path, out_path):
    """Frequency-band analysis of a weight bank."""
    try:
        originals = compression.read_layer_bank(original_path)
        compressed = None
        if compressed_path is not None:
            compressed = compression.read_layer_bank(compressed_path)
            if len(compressed) != len(originals):
                raise ValueError(
                    f"{len(originals)} original layers vs {len(compressed)} compressed"
                )
        reports = []
        for i, layer in enumerate(originals):
            partner = compressed[i] if compressed is not None else None
            reports.append(spectral.analyze_layer(layer, partner).to_dict())
        _dump_json(reports, out_path)
    except Exception as exc:
        _fail("spectrum", exc)
    click.echo(f"analyzed {len(reports)} layers -> {out_path}")


@main.command("synth")
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--seed", default=7, show_default=True, type=int)
@click.option("--candidates", default=1000, show_default=True, type=click.IntRange(min=1))
@click.option("--eval-samples", default=256, show_default=True, type=click.IntRange(min=1))
@click.option("--k", default=64, show_default=True, type=click.IntRange(min=1))
@click.option("--layers", "n_layers", default=16, show_default=True, type=click.IntRange(min=1))
def synth_cmd(out_dir, seed, candidates, eval_samples, k, n_layers):
    """Generate a synthetic experiment bundle (activations, layers, config).

    The candidate pool draws from 8 skewed blobs while the evaluation set is
    balanced, so calibration quality hinges on covering every blob. Run the
    bundle with `cola compare --config <out-dir>/config.json`.
    """
    try:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        pool_seed = stage_seed(seed, "synth-pool")
        eval_seed = stage_seed(seed, "synth-eval")
        layer_seed = stage_seed(seed, "synth-layers")
        dims = synthetic.DEFAULT_LAYER_DIMS
        centers = synthetic.blob_centers(
            8, int(sum(dims)), synthetic.DEFAULT_CENTER_SCALE, seed
        )
        acts, _ = synthetic.make_blob_activations(
            candidates, dims, seed=pool_seed,
            proportions=synthetic.DEFAULT_POOL_PROPORTIONS, centers=centers,
        )
        eval_acts, _ = synthetic.make_blob_activations(
            eval_samples, dims, seed=eval_seed, id_prefix="e", centers=centers
        )
        bank = synthetic.make_capability_bank(
            n_layers, 64, centers, dims, seed=layer_seed
        )
        write_activations(acts, out / "acts.cola")
        write_activations(eval_acts, out / "eval.cola")
        compression.write_layer_bank(bank, out / "layers.cola")
        config = {
            "seed": seed,
            "output_dir": "out",
            "stage3": {"activations": "acts.cola", "k": k, "reduced_dim": 64},
            "stage4": {
                "layers": "layers.cola",
                "eval_activations": "eval.cola",
                "scheme": {"kind": "reconstruct_prune", "sparsity": 0.5},
            },
        }
        with (out / "config.json").open("w", encoding="utf-8") as fh:
            json.dump(config, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except Exception as exc:
        _fail("synth", exc)
    click.echo(f"wrote synthetic bundle to {out}")


if __name__ == "__main__":
    main()
