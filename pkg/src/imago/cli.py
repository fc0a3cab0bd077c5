"""Command-line entry point (`imago`): synth | stats | split | train | eval |
export-images | import-predictions | report | compare | convert-uci.

Every subcommand is deterministic given its seed; reruns with the same
config produce byte-identical artifacts.  Exit codes: 0 success, 2 on
validation/config errors, 1 on runtime errors.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click

import imago
from imago import baselines, cluster, dataset as dataset_io, encoder, metrics, report as report_io
from imago._parallel import default_workers
from imago.errors import ImagoError, ValidationError
from imago.kernels import BACKEND
from imago.trace import label_stats

APPROACHES = ("ca", "pa", "fnn", "lam", "klam", "const")

DEFAULTS = {
    "levels": 10,
    "seed": 0,
    "test_fraction": 0.2,
    "workers": None,
    "grid": 10000,
    "max_cells": 300_000_000,
    "approaches": "ca,pa",
}


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValidationError(f"no such config file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid config JSON in {path}: {exc}") from None
    if not isinstance(obj, dict):
        raise ValidationError(f"config {path} must be a JSON object")
    unknown = set(obj) - set(DEFAULTS)
    if unknown:
        raise ValidationError(f"unknown config keys in {path}: {sorted(unknown)}")
    return obj


def _setting(config: dict, key: str, flag_value):
    """Flags win over the config file, which wins over defaults."""
    if flag_value is not None:
        return flag_value
    if key in config:
        return config[key]
    return DEFAULTS[key]


def _check_budget(dims, max_cells: int) -> None:
    total = dims.n_cells * dims.levels
    if total > max_cells:
        raise ValidationError(
            f"model of {total} cells exceeds the memory budget of {max_cells}; "
            "raise --max-cells if this is intended"
        )


def _print_version(ctx, param, value):
    if not value or ctx.resilient_parsing:
        return
    click.echo(f"imago {imago.__version__} (kernels: {BACKEND})")
    for name, version in sorted(imago.SCHEMA_VERSIONS.items()):
        click.echo(f"schema {name}: v{version}")
    ctx.exit()


@click.group()
@click.option(
    "--version", is_flag=True, callback=_print_version, expose_value=False, is_eager=True,
    help="Print version and schema versions.",
)
def cli():
    """Sparse binary-image malware detectors and their metric battery."""


@cli.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(), help="SynthSpec JSON file.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="Override the spec's seed.")
def synth(spec_path, out_path, seed):
    """Generate a seeded synthetic dataset."""
    try:
        obj = json.loads(Path(spec_path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValidationError(f"no such spec file: {spec_path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid spec JSON in {spec_path}: {exc}") from None
    if seed is not None:
        obj["seed"] = seed
    spec = dataset_io.SynthSpec.from_jsonable(obj)
    ds = dataset_io.generate_synthetic(spec)
    dataset_io.save_traces(ds, out_path)
    click.echo(f"wrote {len(ds)} traces to {out_path}")


@cli.command()
@click.option("--in", "in_path", required=True, type=click.Path())
@click.option("--bins", type=int, default=10, show_default=True)
@click.option("--above", type=float, default=0.5, show_default=True,
              help="Report the fraction of labels strictly above this threshold.")
@click.option("--levels", type=int, default=None)
def stats(in_path, bins, above, levels):
    """Label histogram, CDF, and tail fraction of a dataset."""
    ds = dataset_io.load_traces(in_path, levels=levels or DEFAULTS["levels"])
    st = label_stats(ds.traces, bins)
    out = {
        "count": st.count,
        "bins": st.bins,
        "histogram": list(st.histogram),
        "cdf": list(st.cdf),
        "fraction_above": {str(above): st.fraction_above(above)},
    }
    click.echo(json.dumps(out, indent=2, sort_keys=True))


@cli.command()
@click.option("--in", "in_path", required=True, type=click.Path())
@click.option("--test-frac", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--stratify", is_flag=True, help="Hold out the fraction per cluster band.")
@click.option("--out-train", type=click.Path(), default=None)
@click.option("--out-test", type=click.Path(), default=None)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--levels", type=int, default=None)
def split(in_path, test_frac, seed, stratify, out_train, out_test, config_path, levels):
    """Deterministic seeded train/test partition."""
    config = _load_config(config_path)
    levels = _setting(config, "levels", levels)
    frac = _setting(config, "test_fraction", test_frac)
    seed = _setting(config, "seed", seed)
    ds = dataset_io.load_traces(in_path, levels=levels)
    train_ds, test_ds = dataset_io.split(ds, frac, seed, stratify=stratify)
    stem = Path(in_path)
    out_train = out_train or str(stem.with_suffix(".train.jsonl"))
    out_test = out_test or str(stem.with_suffix(".test.jsonl"))
    dataset_io.save_traces(train_ds, out_train)
    dataset_io.save_traces(test_ds, out_test)
    click.echo(f"train: {len(train_ds)} traces -> {out_train}")
    click.echo(f"test:  {len(test_ds)} traces -> {out_test}")


@cli.command()
@click.option("--in", "in_path", required=True, type=click.Path())
@click.option("--levels", type=int, default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--render", "render_path", type=click.Path(), default=None,
              help="Also write the clustering image as a PGM.")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--max-cells", type=int, default=None)
def train(in_path, levels, out_path, render_path, config_path, max_cells):
    """Build the cluster model (CI/PI/CW/CL) from a trainset."""
    config = _load_config(config_path)
    levels = _setting(config, "levels", levels)
    max_cells = _setting(config, "max_cells", max_cells)
    ds = dataset_io.load_traces(in_path, levels=levels)
    _check_budget(ds.dims, max_cells)
    model = cluster.train(ds.traces, ds.dims)
    cluster.save_model(model, out_path)
    if render_path:
        cluster.render_clustering_image(model, render_path)
    click.echo(
        f"trained on {model.training_size()} traces "
        f"({ds.dims.n_features}x{ds.dims.horizon}, {levels} levels) -> {out_path}"
    )


def _approach_pairs(name, train_ds, test_ds, model, workers, grid):
    test_images = [encoder.encode(tr, test_ds.dims) for tr in test_ds.traces]
    truths = [float(tr.label) for tr in test_ds.traces]
    if name in ("ca", "pa"):
        results = cluster.classify_many(model, test_images, name, workers)
        return [(xi, xi_hat) for xi, (_, xi_hat) in zip(truths, results)]
    if name == "fnn":
        index = baselines.NeighborIndex.build(train_ds.traces, train_ds.dims)
        preds = baselines.fnn_predict_many(index, test_images, workers)
        return list(zip(truths, preds))
    if name == "lam":
        memory = baselines.lam_train_traces(train_ds.traces, train_ds.dims)
        return [(xi, baselines.lam_predict(memory, img)) for xi, img in zip(truths, test_images)]
    if name == "klam":
        memory = baselines.kernel_lam_train(train_ds.traces, model)
        return [(xi, baselines.lam_predict(memory, img)) for xi, img in zip(truths, test_images)]
    if name == "const":
        sweep = baselines.constant_sweep(truths, grid)
        return [(xi, sweep.best) for xi in truths]
    raise ValidationError(f"unknown approach {name!r} (expected one of {', '.join(APPROACHES)})")


@cli.command("eval")
@click.option("--train", "train_path", required=True, type=click.Path())
@click.option("--test", "test_path", required=True, type=click.Path())
@click.option("--model", "model_path", type=click.Path(), default=None,
              help="Load a saved cluster model instead of training one.")
@click.option("--approach", "approach_csv", default=None,
              help="Comma-separated subset of ca,pa,fnn,lam,klam,const, or 'all'.")
@click.option("--levels", type=int, default=None)
@click.option("--workers", type=int, default=None)
@click.option("--grid", type=int, default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--markdown", "markdown_path", type=click.Path(), default=None)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--max-cells", type=int, default=None)
def eval_cmd(train_path, test_path, model_path, approach_csv, levels, workers, grid,
             out_path, markdown_path, config_path, max_cells):
    """Evaluate detectors on a held-out set; writes one report per approach."""
    config = _load_config(config_path)
    levels = _setting(config, "levels", levels)
    workers = _setting(config, "workers", workers) or default_workers()
    grid = _setting(config, "grid", grid)
    max_cells = _setting(config, "max_cells", max_cells)
    approach_csv = _setting(config, "approaches", approach_csv)

    names = [a.strip() for a in approach_csv.split(",") if a.strip()]
    if names == ["all"]:
        names = list(APPROACHES)
    unknown = [a for a in names if a not in APPROACHES]
    if unknown:
        raise ValidationError(
            f"unknown approach name(s): {', '.join(unknown)} "
            f"(expected one of {', '.join(APPROACHES)})"
        )
    if len(set(names)) != len(names):
        raise ValidationError(f"duplicate approach names: {approach_csv!r}")
    if not names:
        raise ValidationError("no approaches requested")

    train_ds = dataset_io.load_traces(train_path, levels=levels)
    test_ds = dataset_io.load_traces(test_path, levels=levels, expect_dims=train_ds.dims)
    model = None
    if any(a in ("ca", "pa", "klam") for a in names):
        _check_budget(train_ds.dims, max_cells)
        if model_path:
            model = cluster.load_model(model_path)
            if (model.dims.n_features, model.dims.horizon) != (
                train_ds.dims.n_features,
                train_ds.dims.horizon,
            ) or model.levels != levels:
                raise ValidationError("saved model geometry does not match the datasets")
        else:
            model = cluster.train(train_ds.traces, train_ds.dims)

    reports = []
    for name in names:
        pairs = _approach_pairs(name, train_ds, test_ds, model, workers, grid)
        reports.append(metrics.evaluate_pairs(name, pairs))
        click.echo(
            f"{name}: mcae={reports[-1].mcae:.4f} "
            f"total_accuracy={reports[-1].total_accuracy:.4f}"
        )
    report_io.save_report(reports, out_path)
    if markdown_path:
        Path(markdown_path).write_text(report_io.render_markdown(reports), encoding="utf-8")
    click.echo(f"report -> {out_path}")


@cli.command("export-images")
@click.option("--in", "in_path", required=True, type=click.Path())
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--levels", type=int, default=None)
@click.option("--model", "model_path", type=click.Path(), default=None,
              help="Fill per-cluster mean labels from a trained model.")
@click.option("--reduce", "reduce_", is_flag=True,
              help="Drop the model's dead rows/columns from every image.")
@click.option("--config", "config_path", type=click.Path(), default=None)
def export_images(in_path, out_dir, levels, model_path, reduce_, config_path):
    """Write one PGM per trace into per-cluster folders plus a manifest."""
    config = _load_config(config_path)
    levels = _setting(config, "levels", levels)
    ds = dataset_io.load_traces(in_path, levels=levels)
    model = cluster.load_model(model_path) if model_path else None
    if model is not None and (
        model.dims.n_features != ds.dims.n_features
        or model.dims.horizon != ds.dims.horizon
        or model.levels != levels
    ):
        raise ValidationError("saved model geometry does not match the dataset")
    manifest = encoder.export_images(ds, out_dir, model=model, reduce=reduce_)
    click.echo(f"exported {len(manifest['images'])} images to {out_dir}")


@cli.command("import-predictions")
@click.option("--pred", "pred_path", required=True, type=click.Path())
@click.option("--test", "test_path", required=True, type=click.Path())
@click.option("--name", default="dnn", show_default=True, help="Approach name in the report.")
@click.option("--levels", type=int, default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None)
def import_predictions(pred_path, test_path, name, levels, out_path, config_path):
    """Join an external detector's CSV (id,xi_hat) with true labels and
    evaluate it like any built-in approach."""
    config = _load_config(config_path)
    levels = _setting(config, "levels", levels)
    test_ds = dataset_io.load_traces(test_path, levels=levels)
    preds = _read_predictions_csv(pred_path)

    test_ids = {tr.id for tr in test_ds.traces}
    missing = test_ids - set(preds)
    extra = set(preds) - test_ids
    if missing or extra:
        raise ValidationError(
            f"prediction ids do not match the test set: {len(missing)} test ids missing "
            f"from the CSV, {len(extra)} CSV ids not in the test set "
            f"(e.g. missing={sorted(missing)[:3]}, extra={sorted(extra)[:3]})"
        )
    pairs = [(float(tr.label), preds[tr.id]) for tr in test_ds.traces]
    reports = [metrics.evaluate_pairs(name, pairs)]
    report_io.save_report(reports, out_path)
    click.echo(
        f"{name}: mcae={reports[0].mcae:.4f} total_accuracy={reports[0].total_accuracy:.4f}"
    )
    click.echo(f"report -> {out_path}")


def _read_predictions_csv(path: str) -> dict[str, float]:
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except FileNotFoundError:
        raise ValidationError(f"no such predictions file: {path}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty predictions CSV (header required)") from None
        if [h.strip() for h in header] != ["id", "xi_hat"]:
            raise ValidationError(
                f"{path}: predictions CSV header must be exactly 'id,xi_hat', got {header!r}"
            )
        preds: dict[str, float] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ValidationError(f"{path}: line {lineno}: expected 2 columns, got {len(row)}")
            sample_id, value = row[0].strip(), row[1].strip()
            if sample_id in preds:
                raise ValidationError(f"{path}: line {lineno}: duplicate id {sample_id!r}")
            try:
                preds[sample_id] = float(value)
            except ValueError:
                raise ValidationError(
                    f"{path}: line {lineno}: xi_hat is not a number: {value!r}"
                ) from None
    if not preds:
        raise ValidationError(f"{path}: predictions CSV has no rows")
    return preds


@cli.command("report")
@click.option("--in", "in_path", required=True, type=click.Path())
@click.option("--format", "format_", type=click.Choice(["json", "markdown"]), default="markdown",
              show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
def report_cmd(in_path, format_, out_path):
    """Render a saved report as markdown or canonical JSON."""
    reports = report_io.load_report(in_path)
    text = report_io.emit_report(reports, format_)
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
        click.echo(f"wrote {out_path}")
    else:
        click.echo(text, nl=False)


@cli.command("compare")
@click.argument("inputs", nargs=-1, required=True, type=click.Path())
@click.option("--out", "out_path", type=click.Path(), default=None)
def compare(inputs, out_path):
    """Merge one or more report files into a single comparison table."""
    merged = []
    seen = set()
    for path in inputs:
        for rep in report_io.load_report(path):
            if rep.approach in seen:
                raise ValidationError(f"approach {rep.approach!r} appears in more than one report")
            seen.add(rep.approach)
            merged.append(rep)
    text = report_io.render_markdown(merged)
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
        click.echo(f"wrote {out_path}")
    else:
        click.echo(text, nl=False)


@cli.command("convert-uci")
def convert_uci():
    """Describe the JSONL contract for adapting an external corpus.

    The original corpus layout is not reverse-engineered here; convert it
    yourself to the documented format and feed the result to any command.
    """
    click.echo(
        "Expected dataset format (JSON lines, UTF-8):\n"
        '  line 1 header: {"n_features": <int >= 1>, "horizon": <int >= 1>}\n'
        '  per trace:     {"id": <unique str>, "xi": <float in [0, 1]>,\n'
        '                  "events": [[feature >= 1, time >= 1], ...]}\n'
        "Feature/time indices are 1-based and bounded by the header; duplicate\n"
        "(feature, time) pairs are merged.  Write one converted file, then use\n"
        "'imago split' / 'imago train' / 'imago eval' as with synthetic data."
    )


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
    except ValidationError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except (ImagoError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
