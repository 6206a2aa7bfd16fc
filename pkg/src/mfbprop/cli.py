"""Command line: ``mfbprop {teacher-student, mnist, verify, eval}``.

Exit status 0 on success, 1 when a verification suite fails, 2 on usage
errors (bad flags, impossible architectures, missing data files).
"""
from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import backprop, bitpack, dataio, experiments, oracle, posterior, predictor, verification
from .engine import EPS
from .experiments import ALGORITHMS, RunConfig
from .training import MFBLearner


def _config(command, **kw):
    kw["algorithms"] = tuple(kw.pop("algo", None) or ALGORITHMS)
    try:
        return RunConfig(command, **kw)
    except ValueError as e:
        raise click.UsageError(str(e)) from None


def _run(fn, cfg):
    try:
        return fn(cfg, log=lambda s: click.echo(s, err=True))
    except FileNotFoundError as e:
        raise click.UsageError(str(e)) from None
    except ValueError as e:
        raise click.UsageError(str(e)) from None


algo_option = click.option("--algo", multiple=True, type=click.Choice(ALGORITHMS),
                           help="Algorithm to run; repeat for several. Default: all four.")
eps_option = click.option("--eps", type=float, default=EPS, show_default=True,
                          help="Variance floor added to every sigma^2.")
seed_option = click.option("--seed", type=int, default=0, show_default=True)
eta_option = click.option("--eta", type=float, default=None,
                          help="BackProp learning rate (default: the tabulated value).")
data_option = click.option("--data-dir", type=click.Path(file_okay=False), envvar=dataio.DATA_DIR_ENV,
                           help=f"Directory with the four MNIST IDX files (env: {dataio.DATA_DIR_ENV}).")


@click.group()
def main():
    """Mean-field Bayesian training of binary-weight converging networks."""


@main.command("teacher-student")
@click.option("--arch", default="7x7x1", show_default=True, help="Teacher and student shape MxMx1, M odd.")
@algo_option
@click.option("--trials", type=int, default=10, show_default=True)
@click.option("--samples", type=int, default=200_000, show_default=True, help="Training samples per trial.")
@click.option("--test-samples", type=int, default=10_000, show_default=True)
@click.option("--window", type=int, default=5000, show_default=True, help="Training-error window.")
@click.option("--log-every", type=int, default=1000, show_default=True)
@eta_option
@eps_option
@seed_option
@click.option("--out", type=click.Path(file_okay=False), default="runs/teacher-student", show_default=True)
@click.option("--trace-steps", type=int, default=0, help="Dump full traces of the first N updates (trial 0).")
def teacher_student(**kw):
    """Synthetic task: learn a random binary teacher online."""
    cfg = _config("teacher-student", **kw)
    res = _run(experiments.run_teacher_student, cfg)
    for a, r in res.items():
        click.echo(f"{a}\tbest_test_error={r['best_test_error']:.4f}\ttrial={r['best_trial']}")


@main.command()
@click.option("--arch", default="785x3010x10", show_default=True)
@algo_option
@click.option("--epochs", type=int, default=1, show_default=True)
@click.option("--max-train", type=int, default=None, help="Use only the first N training images.")
@click.option("--max-test", type=int, default=None, help="Use only the first N test images.")
@click.option("--window", type=int, default=5000, show_default=True)
@click.option("--log-every", type=int, default=1000, show_default=True)
@eta_option
@eps_option
@seed_option
@data_option
@click.option("--out", type=click.Path(file_okay=False), default="runs/mnist", show_default=True)
@click.option("--save-models/--no-save-models", default=True, show_default=True)
def mnist(**kw):
    """MNIST digits, trained for the given number of shuffled epochs."""
    cfg = _config("mnist", **kw)
    errs = _run(experiments.run_mnist, cfg)
    for a, e in errs.items():
        click.echo(f"{a}\ttest_error={e:.4f}")


@main.command()
@eps_option
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Also write verify.csv and the oracle report here.")
def verify(eps, out):
    """Run the invariant and oracle suites; exit 1 if any fails."""
    results = verification.run_all(eps=eps, log=click.echo)
    if out:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "verify.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["suite", "checks", "failures", "passed", "seconds", "detail"])
            for r in results:
                w.writerow([r.name, r.checks, r.failures, int(r.passed), f"{r.seconds:.3f}", r.detail])
        for r in results:
            if "rows" in r.metrics:
                oracle.write_report(r.metrics["rows"], out / "oracle_report.csv")
    failed = [r.name for r in results if not r.passed]
    click.echo(f"{len(results) - len(failed)}/{len(results)} suites passed")
    if failed:
        sys.exit(1)


@main.command("eval")
@click.option("--model", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Saved posterior (.json, kind mfb), baseline (.json, kind rmnn) or packed network (.bmnn).")
@data_option
@click.option("--max-train", type=int, default=None,
              help="Fit input statistics on the first N training images, as the training run did.")
@click.option("--max-test", type=int, default=None)
@eps_option
def evaluate(model, data_dir, max_train, max_test, eps):
    """Test error of a saved model on the MNIST test set."""
    try:
        tr_img, _, te_img, te_lab = dataio.load_mnist(data_dir)
    except FileNotFoundError as e:
        raise click.UsageError(str(e)) from None
    if max_train:
        tr_img = tr_img[:max_train]
    if max_test:
        te_img, te_lab = te_img[:max_test], te_lab[:max_test]
    _, X, _ = dataio.preprocess(tr_img, te_img)
    models = _load_model(model, eps)
    for algo, (scores, dim) in models.items():
        if X.shape[1] != dim:
            raise click.UsageError(f"model expects {dim} inputs, data has {X.shape[1]}")
        pred = predictor.classify(scores(X))
        click.echo(f"{algo}\ttest_error={np.mean(pred != te_lab):.4f}")


def _load_model(path, eps):
    """Map algorithm name -> (score function, input dimension)."""
    if str(path).endswith(".bmnn"):
        W = [w.astype(float) for w in bitpack.unpack(bitpack.load(path))]
        return {"mfb": (lambda X: experiments.mnist_scores("mfb", W, X), W[0].shape[1])}
    with open(path) as f:
        kind = json.load(f).get("kind")
    if kind == "mfb":
        params = posterior.load(path)
        learner = MFBLearner(params, eps)
        W = posterior.clip_map(params)
        d = params.topology.input_dim
        return {"mfb": (lambda X: experiments.mnist_scores("mfb", W, X), d),
                "pmfb": (lambda X: experiments.mnist_scores("pmfb", learner, X), d)}
    if kind == "rmnn":
        p = backprop.load(path)
        d = p.topology.input_dim
        return {"backprop": (lambda X: experiments.mnist_scores("backprop", p, X), d),
                "clipped": (lambda X: experiments.mnist_scores("clipped", p, X), d)}
    raise click.UsageError(f"unknown model kind {kind!r} in {path}")


if __name__ == "__main__":
    main()
