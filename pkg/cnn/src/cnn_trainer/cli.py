"""`cnn-trainer` command line: train on an exported image tree, predict a
CSV for `imago import-predictions`."""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from cnn_trainer import TrainerError
from cnn_trainer.data import TrainManifest
from cnn_trainer.training import (
    load_checkpoint,
    predict_cnn,
    predictions_csv,
    save_checkpoint,
    train_cnn,
)


@click.group()
def cli():
    """CNN maliciousness-level detector over exported trace images."""
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)


@cli.command()
@click.option("--images", "images_dir", required=True, type=click.Path(),
              help="Export root (folders 1..levels plus manifest.json).")
@click.option("--epochs", type=int, default=10, show_default=True)
@click.option("--batch-size", type=int, default=64, show_default=True)
@click.option("--lr", type=float, default=1e-3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--deterministic", is_flag=True,
              help="Single-threaded, fully seeded run; needed for reproducible checkpoints.")
@click.option("--out", "out_path", required=True, type=click.Path())
def train(images_dir, epochs, batch_size, lr, seed, deterministic, out_path):
    """Train the level classifier on the exported training images."""
    manifest = TrainManifest.from_export(
        images_dir, epochs=epochs, batch_size=batch_size, seed=seed, lr=lr
    )
    checkpoint = train_cnn(manifest, deterministic=deterministic)
    save_checkpoint(checkpoint, out_path)
    click.echo(f"checkpoint -> {out_path}")


@cli.command()
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path())
@click.option("--images", "images_dir", required=True, type=click.Path(),
              help="Directory tree of PGMs to score (searched recursively).")
@click.option("--out", "out_path", required=True, type=click.Path())
def predict(checkpoint_path, images_dir, out_path):
    """Write `id,xi_hat` predictions for every image under --images."""
    checkpoint = load_checkpoint(checkpoint_path)
    rows = predict_cnn(checkpoint, images_dir)
    Path(out_path).write_text(predictions_csv(rows), encoding="utf-8")
    click.echo(f"{len(rows)} predictions -> {out_path}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.UsageError as exc:
        exc.show()
        return 2
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except TrainerError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
