"""Train and serve commands."""

from __future__ import annotations

from pathlib import Path

import click

from .service import serve
from .training import Hyperparameters, train


@click.group()
def cli() -> None:
    """Reference CNN inference service for the benchmark harness."""


@cli.command("train")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(path_type=Path))
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@click.option("--epochs", type=int, default=8, show_default=True)
@click.option("--batch-size", type=int, default=16, show_default=True)
@click.option("--learning-rate", type=float, default=1e-3, show_default=True)
@click.option("--input-size", type=int, default=32, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def train_command(manifest_path, out_path, epochs, batch_size, learning_rate, input_size, seed) -> None:
    """Fine-tune a small classifier on a manifest's train split."""
    result = train(
        manifest_path,
        Hyperparameters(epochs=epochs, batch_size=batch_size, learning_rate=learning_rate,
                        input_size=input_size, seed=seed),
        out_path,
    )
    click.echo(f"weights: {result.weights_path}")
    click.echo(f"val_accuracy: {result.val_accuracy:.4f}")


@cli.command("serve")
@click.option("--weights", "weights_path", required=True, type=click.Path(path_type=Path))
@click.option("--port", type=int, default=8601, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
def serve_command(weights_path, port, host) -> None:
    """Serve a trained model over the local_server protocol."""
    serve(weights_path, port, host)


def entrypoint() -> None:
    cli()
