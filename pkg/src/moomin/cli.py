"""Command-line entry point.

Exit codes: 0 on success, 1 for validation or data errors, 2 when an
internal invariant breaks (non-finite parameters, failed gradient check).
"""

from __future__ import annotations

import csv
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import click
import numpy as np

from . import tensor as T
from .contextualizer import EXACT, SAMPLED, contextualize, relative_block_errors
from .dataio import (
    DatasetBundle,
    assemble_bundle,
    bundle_paths,
    load_bundle,
    load_checkpoint,
    read_triples,
    save_checkpoint,
)
from .errors import MoominError
from .metrics import REPORT_FIELDS
from .molgraph import parse_smiles
from .synergy import ModelConfig, MoominModel, SynergyRecord, batch_forward, head_inputs, predict
from .synth import RULES, SynthSpec, synth as synth_bundle
from .trainer import HISTORY_HEADER, TrainConfig, evaluate, split_records, stream, train as run_training

logger = logging.getLogger(__name__)

EXIT_DATA = 1
EXIT_INTERNAL = 2


class ExitCodeGroup(click.Group):
    """Map package errors onto the documented exit codes."""

    def main(self, *args, standalone_mode: bool = True, **kwargs):
        # Click reports usage errors with code 2; here 2 means an internal breach.
        try:
            rv = super().main(*args, standalone_mode=False, **kwargs)
        except click.ClickException as exc:
            exc.show()
            rv = EXIT_DATA
        except click.Abort:
            click.echo("Aborted!", err=True)
            rv = EXIT_DATA
        if not standalone_mode:
            return rv
        sys.exit(rv if isinstance(rv, int) else 0)

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except (MoominError, ValueError, OSError) as exc:
            click.echo(f"error: {exc}", err=True)
            ctx.exit(EXIT_DATA)
        except (FloatingPointError, AssertionError) as exc:
            click.echo(f"internal error: {exc}", err=True)
            ctx.exit(EXIT_INTERNAL)


def _write_csv(path: Optional[str], header: Sequence[str], rows: Sequence[Sequence]) -> None:
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.10g}"
        return v

    if path is None or path == "-":
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        w.writerows([[fmt(v) for v in row] for row in rows])
        return
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows([[fmt(v) for v in row] for row in rows])


def _bundle_from(ctx_opts: dict) -> DatasetBundle:
    data_dir = ctx_opts.get("data")
    paths = bundle_paths(data_dir) if data_dir else {}
    for key in ("graph", "molecules", "proteins", "cells", "synergy"):
        if ctx_opts.get(key):
            paths[key] = Path(ctx_opts[key])
    missing = [k for k in ("graph", "molecules", "proteins", "cells", "synergy") if k not in paths]
    if missing:
        raise click.UsageError(f"missing input files: {', '.join('--' + m for m in missing)} (or --data DIR)")
    return load_bundle(paths["graph"], paths["molecules"], paths["proteins"], paths["cells"], paths["synergy"])


def bundle_options(f):
    for name, help_ in reversed([
        ("data", "Directory holding graph.tsv, molecules.smi, proteins.csv, cells.tsv, synergy.csv."),
        ("graph", "Drug-protein edge list (TSV)."),
        ("molecules", "SMILES file, fallback molecule file or directory."),
        ("proteins", "Protein feature CSV."),
        ("cells", "Cell line TSV with optional tissue tag."),
        ("synergy", "Synergy CSV drug_a,drug_b,cell,label."),
    ]):
        f = click.option(f"--{name}", type=click.Path(), default=None, help=help_)(f)
    return f


def _threads(n: int) -> None:
    # Cap BLAS worker threads when threadpoolctl is available; default 1 keeps runs bit-stable.
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return
    threadpool_limits(n)


@click.group(cls=ExitCodeGroup)
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
@click.option("--threads", type=int, default=1, show_default=True, help="Maximum worker threads.")
def main(verbose: bool, threads: int):
    """Drug-pair synergy scoring with multi-scale graph context."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _threads(threads)


@main.command()
@click.option("--out", required=True, type=click.Path(), help="Output directory.")
@click.option("--n-drugs", type=int, default=SynthSpec.n_drugs, show_default=True)
@click.option("--n-proteins", type=int, default=SynthSpec.n_proteins, show_default=True)
@click.option("--n-cells", type=int, default=SynthSpec.n_cells, show_default=True)
@click.option("--edge-prob", type=float, default=SynthSpec.edge_prob, show_default=True)
@click.option("--n-records", type=int, default=SynthSpec.n_records, show_default=True)
@click.option("--rule", "planted_rule", type=click.Choice(RULES), default=SynthSpec.planted_rule,
              show_default=True)
@click.option("--noise", "noise_rate", type=float, default=SynthSpec.noise_rate, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def synth(out, **kwargs):
    """Generate a synthetic dataset with a planted labelling rule."""
    bundle = synth_bundle(SynthSpec(**kwargs), out)
    n_pos = sum(r.label for r in bundle.synergy)
    click.echo(f"wrote {len(bundle.synergy)} records ({n_pos} positive) to {out}", err=True)


def _train_config(r, mode, samples, batch_size, lr, weight_decay, epochs, train_ratio, seed,
                  cv_folds=0) -> TrainConfig:
    return TrainConfig(r=r, mode=mode, samples=samples, batch_size=batch_size, lr=lr,
                       weight_decay=weight_decay, epochs=epochs, train_ratio=train_ratio, seed=seed,
                       cv_folds=cv_folds)


def train_options(f):
    opts = [
        click.option("--r", type=int, default=1, show_default=True, help="Maximum scale."),
        click.option("--mode", type=click.Choice([EXACT, SAMPLED]), default=EXACT, show_default=True),
        click.option("--samples", type=int, default=128, show_default=True, help="Walks per drug (sampled mode)."),
        click.option("--batch-size", type=int, default=32, show_default=True),
        click.option("--lr", type=float, default=5e-3, show_default=True),
        click.option("--weight-decay", type=float, default=5e-5, show_default=True),
        click.option("--epochs", type=int, default=50, show_default=True),
        click.option("--train-ratio", type=float, default=0.8, show_default=True),
        click.option("--seed", type=int, default=0, show_default=True),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


@main.command()
@bundle_options
@train_options
@click.option("--cv-folds", type=int, default=0, show_default=True,
              help="Choose the epoch count by k-fold cross-validation on the training split.")
@click.option("--out", required=True, type=click.Path(), help="Output directory for checkpoint and history.")
def train(out, r, mode, samples, batch_size, lr, weight_decay, epochs, train_ratio, seed, cv_folds, **files):
    """Train a model; writes model.ckpt and history.csv."""
    bundle = _bundle_from(files)
    cfg = _train_config(r, mode, samples, batch_size, lr, weight_decay, epochs, train_ratio, seed, cv_folds)
    result = run_training(cfg, bundle)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.model, out_dir / "model.ckpt")
    _write_csv(str(out_dir / "history.csv"), HISTORY_HEADER,
               [[h.epoch, h.train_loss, h.val_roc_auc, h.val_pr_auc, h.val_f1] for h in result.history])
    click.echo(f"trained {result.epochs} epochs; checkpoint at {out_dir / 'model.ckpt'}", err=True)


def _records_for(triples, labels=None) -> list[SynergyRecord]:
    return [SynergyRecord(a, b, c, 0 if labels is None else labels[i]) for i, (a, b, c) in enumerate(triples)]


@main.command()
@bundle_options
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--triples", type=click.Path(exists=True), default=None,
              help="CSV with drug_a,drug_b,cell to score (defaults to the synergy file).")
@click.option("--mode", type=click.Choice([EXACT, SAMPLED]), default=EXACT, show_default=True)
@click.option("--samples", type=int, default=128, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None, help="Output CSV (stdout by default).")
def score(checkpoint, triples, mode, samples, seed, out, **files):
    """Score drug pairs on cell lines with a trained checkpoint (dropout off)."""
    bundle = _bundle_from(files)
    model = load_checkpoint(checkpoint)
    if triples:
        recs = _records_for(read_triples(triples))
    else:
        recs = list(bundle.synergy)
    scores = _predict(recs, model, bundle, mode, samples, seed)
    _write_csv(out, ("drug_a", "drug_b", "cell", "score"),
               [[r.drug_a, r.drug_b, r.cell, f"{s:.17g}"] for r, s in zip(recs, scores)])


def _predict(records, model, bundle, mode, samples, seed) -> np.ndarray:
    return predict(records, model, bundle.graph, bundle, mode, samples, stream(seed, "eval"))


def _read_scores(path) -> dict[tuple[str, str, str], float]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"drug_a", "drug_b", "cell", "score"} <= set(reader.fieldnames):
            raise click.UsageError("scores CSV needs drug_a,drug_b,cell,score columns")
        for row in reader:
            out[(row["drug_a"], row["drug_b"], row["cell"])] = float(row["score"])
    return out


@main.command(name="eval")
@bundle_options
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
@click.option("--scores", "scores_path", type=click.Path(exists=True), default=None,
              help="Evaluate a drug_a,drug_b,cell,score CSV against the synergy labels instead.")
@click.option("--split", type=click.Choice(["test", "train", "all"]), default="test", show_default=True,
              help="Records to evaluate when scoring with a checkpoint.")
@click.option("--mode", type=click.Choice([EXACT, SAMPLED]), default=EXACT, show_default=True)
@click.option("--samples", type=int, default=128, show_default=True)
@click.option("--train-ratio", type=float, default=0.8, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--threshold", type=float, default=0.5, show_default=True)
@click.option("--group-by", type=click.Choice(["tissue", "molsize"]), default=None)
@click.option("--out", type=click.Path(), default=None)
def eval_cmd(checkpoint, scores_path, split, mode, samples, train_ratio, seed, threshold, group_by, out, **files):
    """ROC AUC, PR AUC and F1, optionally per tissue or molecule-size class."""
    bundle = _bundle_from(files)
    if (checkpoint is None) == (scores_path is None):
        raise click.UsageError("give exactly one of --checkpoint or --scores")
    if scores_path:
        given = _read_scores(scores_path)
        records = [r for r in bundle.synergy if (r.drug_a, r.drug_b, r.cell) in given]
        if not records:
            raise click.UsageError("no scored triple matches a synergy record")
        scores = np.array([given[(r.drug_a, r.drug_b, r.cell)] for r in records])
        model = None
    else:
        model = load_checkpoint(checkpoint)
        train_set, test_set = split_records(bundle.synergy, train_ratio, seed)
        records = {"test": test_set, "train": train_set, "all": list(bundle.synergy)}[split]
        scores = _predict(records, model, bundle, mode, samples, seed)
    reports = evaluate(model, records, bundle, mode, threshold, group_by, samples, scores=scores)
    _write_csv(out, ("group",) + REPORT_FIELDS,
               [[k] + [getattr(rep, f) for f in REPORT_FIELDS] for k, rep in reports.items()])


def walkcheck_rows(bundle: DatasetBundle, model: MoominModel, drug: str, r: int, ladder: Sequence[int],
                   trials: int, seed: int) -> list[list]:
    """Relative block error of sampled against exact representations for each sample count."""
    exact = contextualize(bundle.graph, model, bundle, [drug], r, EXACT)
    rows = []
    for s in ladder:
        errs = []
        for trial in range(trials):
            rng = np.random.default_rng([seed, s, trial])
            approx = contextualize(bundle.graph, model, bundle, [drug], r, SAMPLED, samples=s, rng=rng)
            errs.append(max(relative_block_errors(approx, exact)))
        errs = np.array(errs)
        rows.append([s, float(errs.mean()), float(errs.max()), float(errs.std())])
    return rows


@main.command()
@bundle_options
@click.option("--drug", required=True, help="Source drug ID.")
@click.option("--r", type=int, default=2, show_default=True)
@click.option("--max-samples", type=int, default=128, show_default=True, help="Top of the doubling ladder from 2.")
@click.option("--trials", type=int, default=10, show_default=True)
@click.option("--checkpoint", type=click.Path(exists=True), default=None,
              help="Use trained encoders instead of randomly initialised ones.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def walkcheck(drug, r, max_samples, trials, checkpoint, seed, out, **files):
    """Convergence of sampled representations to the exact ones."""
    bundle = _bundle_from(files)
    bundle.graph.index(drug)
    if checkpoint:
        model = load_checkpoint(checkpoint)
    else:
        model = MoominModel.init(ModelConfig(r=r, protein_dim=bundle.protein_dim), bundle.cells,
                                 stream(seed, "init"))
    ladder = []
    s = 2
    while s <= max_samples:
        ladder.append(s)
        s *= 2
    rows = walkcheck_rows(bundle, model, drug, r, ladder, trials, seed)
    _write_csv(out, ("samples", "mean_rel_error", "max_rel_error", "std_rel_error"), rows)


def tiny_bundle(seed: int) -> DatasetBundle:
    """Three drugs, four proteins, two cells; every drug and protein connected."""
    rng = np.random.default_rng(seed)
    edges = [("d0", "p0"), ("d0", "p1"), ("d1", "p1"), ("d1", "p2"), ("d2", "p2"), ("d2", "p3"), ("d0", "p3")]
    molecules = {"d0": parse_smiles("CC(=O)N"), "d1": parse_smiles("C1CCOC1Cl"), "d2": parse_smiles("OCC#N")}
    feats = {f"p{i}": rng.normal(size=5) for i in range(4)}
    tissues = {"c0": "Lung", "c1": "Skin"}
    records = [SynergyRecord("d0", "d1", "c0", 1), SynergyRecord("d1", "d2", "c1", 0),
               SynergyRecord("d2", "d0", "c0", 1), SynergyRecord("d0", "d2", "c1", 0)]
    return assemble_bundle(edges, molecules, feats, tissues, records)


def gradient_check(r: int, seed: int, h: float = 1e-5, retry_above: float = 1e-5) -> dict[str, float]:
    """Max relative error between backprop and central differences, per parameter.

    Relative error is ``|a - n| / max(|a|, |n|, 1e-6)`` so entries whose true
    gradient is numerically zero are judged on absolute error. Entries worse
    than ``retry_above`` are re-measured with step ``h / 10`` and keep the
    better of the two.
    """
    bundle = tiny_bundle(seed)
    model = MoominModel.init(ModelConfig(r=r, protein_dim=bundle.protein_dim), bundle.cells,
                             np.random.default_rng([seed, r]))
    for p in model.parameters().values():
        p.data = p.data + np.random.default_rng([seed, 99]).normal(scale=0.1, size=p.shape)

    def loss() -> float:
        return batch_forward(bundle.synergy, model, bundle.graph, bundle, EXACT, training=False).loss.item()

    model.zero_grad()
    res = batch_forward(bundle.synergy, model, bundle.graph, bundle, EXACT, training=False)
    T.backward(res.loss)
    # Head perturbations leave the pair-cell inputs unchanged, so those
    # differences are taken on a plain numpy head over cached inputs.
    x = head_inputs(bundle.synergy, model, bundle.graph, bundle, EXACT).data
    y = np.array([rec.label for rec in bundle.synergy], dtype=np.float64)
    hp = model.head

    def head_loss() -> float:
        z = np.maximum(x @ hp.w1.data + hp.b1.data, 0.0) @ hp.w2.data + hp.b2.data
        prob = np.clip(1.0 / (1.0 + np.exp(-z[:, 0])), 1e-12, 1.0 - 1e-12)
        return float(-np.mean(y * np.log(prob) + (1.0 - y) * np.log(1.0 - prob)))

    out = {}
    for name, p in model.parameters().items():
        analytic = p.grad.copy()
        f = head_loss if name.startswith("head.") else loss
        worst = 0.0
        for idx in np.ndindex(*p.shape):
            a = analytic[idx]
            err = rel_error(a, central_difference(f, p.data, idx, h))
            if err >= retry_above:
                # A step can straddle a max/min-pool near-tie or a ReLU kink;
                # a genuinely wrong gradient also fails at the smaller step.
                err = min(err, rel_error(a, central_difference(f, p.data, idx, h / 10)))
            worst = max(worst, err)
        out[name] = worst
    return out


def central_difference(f, x: np.ndarray, idx, h: float) -> float:
    orig = x[idx]
    x[idx] = orig + h
    up = f()
    x[idx] = orig - h
    down = f()
    x[idx] = orig
    return (up - down) / (2 * h)


def rel_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-6)


@main.command()
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--r", "scales", type=int, multiple=True, default=(0, 2), show_default=True)
@click.option("--tolerance", type=float, default=1e-4, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def gradcheck(seed, scales, tolerance, out):
    """Compare every parameter gradient with central finite differences."""
    rows = []
    ok = True
    for r in scales:
        errs = gradient_check(r, seed)
        for name, err in errs.items():
            passed = err < tolerance
            ok &= passed
            rows.append([r, name, err, "pass" if passed else "fail"])
    _write_csv(out, ("r", "parameter", "max_rel_error", "status"), rows)
    if not ok:
        raise AssertionError("gradient check failed")


def bench_rows(bundle: DatasetBundle, r: int, batches: Sequence[int], sample_ladder: Sequence[int],
               repetitions: int, seed: int) -> list[list]:
    """Wall-clock seconds per forward+backward step; relative to exact mode at the same batch size."""
    model = MoominModel.init(ModelConfig(r=r, protein_dim=bundle.protein_dim), bundle.cells, stream(seed, "init"))
    records = list(bundle.synergy)
    rng = stream(seed, "shuffle")
    rows = []

    def timed(batch, mode, s) -> list[float]:
        out = []
        walks = np.random.default_rng([seed, len(batch), s])
        drop = np.random.default_rng([seed, 4])
        for _ in range(repetitions):
            t0 = time.perf_counter()
            model.zero_grad()
            res = batch_forward(batch, model, bundle.graph, bundle, mode, s, True, walks, drop)
            T.backward(res.loss)
            out.append(time.perf_counter() - t0)
        return out

    for b in batches:
        idx = rng.choice(len(records), size=min(b, len(records)), replace=len(records) < b)
        batch = [records[i] for i in idx]
        exact = np.array(timed(batch, EXACT, 1))
        base = exact.mean()
        rows.append(["exact", b, "", base, exact.std(), 100.0])
        for s in sample_ladder:
            t = np.array(timed(batch, SAMPLED, s))
            rows.append(["sampled", b, s, t.mean(), t.std(), 100.0 * t.mean() / base])
    return rows


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


@main.command()
@bundle_options
@click.option("--r", type=int, default=1, show_default=True)
@click.option("--batches", default="8,16,32,64", show_default=True, help="Comma-separated batch sizes.")
@click.option("--sample-ladder", default="8,32,128,512", show_default=True, help="Comma-separated sample counts.")
@click.option("--repetitions", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def bench(r, batches, sample_ladder, repetitions, seed, out, **files):
    """Runtime of sampled against exact training steps."""
    bundle = _bundle_from(files)
    rows = bench_rows(bundle, r, _ints(batches), _ints(sample_ladder), repetitions, seed)
    _write_csv(out, ("mode", "batch_size", "samples", "mean_seconds", "std_seconds", "relative_pct"), rows)


if __name__ == "__main__":
    main()
