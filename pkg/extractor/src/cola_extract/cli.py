"""cola-extract command line interface."""

from __future__ import annotations

import sys

import click

from .extractor import ExtractionSpec, extract


@click.command()
@click.option("--model", "model_id", required=True, help="Model id or local path.")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--layers", default="all", show_default=True,
              help="Comma-separated layer indices, or 'all'.")
@click.option("--pooling", default="mean", show_default=True,
              type=click.Choice(["mean", "last_token"]))
@click.option("--max-length", default=2048, show_default=True, type=click.IntRange(min=1))
@click.option("--batch-size", default=8, show_default=True, type=click.IntRange(min=1))
@click.option("--out", "out_path", required=True, type=click.Path())
def main(model_id, dataset_path, layers, pooling, max_length, batch_size, out_path):
    """Dump pooled per-layer hidden states to the activation container."""
    try:
        indices = "all" if layers == "all" else [int(x) for x in layers.split(",")]
        spec = ExtractionSpec(
            model_id=model_id,
            layer_indices=indices,
            pooling=pooling,
            max_length=max_length,
            batch_size=batch_size,
        )
        report = extract(dataset_path, spec, out_path)
    except Exception as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(
        f"wrote {report.n_rows} rows x {sum(report.layer_dims)} dims "
        f"({len(report.layer_dims)} layers) -> {out_path}"
    )
    for sid, reason in report.skipped:
        click.echo(f"skipped {sid}: {reason}", err=True)


if __name__ == "__main__":
    main()
