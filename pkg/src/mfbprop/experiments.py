"""Experiment runners behind the CLI: teacher-student, MNIST, verify, eval.

Each run writes CSV logs and a manifest.json into ``config.out``. Given the
same config, the CSV files are byte-identical across runs.
"""
from __future__ import annotations

import csv
import json
import subprocess
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, backprop, bitpack, dataio, engine, posterior, predictor
from .engine import EPS, LabeledSample
from .posterior import PosteriorParams, init_prior
from .teacher import make_teacher, sample_stream
from .topology import parse_arch
from .training import MFBLearner

ALGORITHMS = ("mfb", "pmfb", "backprop", "clipped")
DEFAULT_ARCH = {"teacher-student": "7x7x1", "mnist": "785x3010x10"}
TRAIN_FIELDS = ["run_id", "algorithm", "trial", "sample_index", "window_error"]
TEST_FIELDS = ["run_id", "algorithm", "trial", "test_error"]


@dataclass
class RunConfig:
    command: str
    arch: str | None = None
    algorithms: tuple = ALGORITHMS
    seed: int = 0
    trials: int = 10
    samples: int = 200_000
    test_samples: int = 10_000
    window: int = 5000
    log_every: int = 1000
    epochs: int = 1
    eta: float | None = None
    eps: float = EPS
    data_dir: str | None = None
    out: str = "runs"
    max_train: int | None = None
    max_test: int | None = None
    trace_steps: int = 0
    model: str | None = None
    save_models: bool = True
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in ("teacher-student", "mnist", "verify", "eval"):
            raise ValueError(f"unknown command {self.command!r}")
        self.algorithms = tuple(a for a in ALGORITHMS if a in set(self.algorithms))
        if not self.algorithms:
            raise ValueError("algorithm set is empty")
        for name in ("trials", "samples", "test_samples", "window", "log_every", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.arch is None:
            self.arch = DEFAULT_ARCH.get(self.command)


def version_string():
    """``git describe``-style version, falling back to the package version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=10,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _seeds(seed, *path, n=1):
    state = np.random.SeedSequence([seed, *path]).generate_state(n, dtype=np.uint64)
    return [int(s) for s in state]


def _fmt(v):
    return f"{v:.6f}"


def _write_csv(path, fields, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(fields)
        w.writerows(rows)


def _write_manifest(out, cfg, seeds, files, results=None):
    doc = {
        "command": cfg.command,
        "config": asdict(cfg),
        "seeds": seeds,
        "version": version_string(),
        "files": sorted(files),
    }
    if results is not None:
        doc["results"] = results
    with open(out / "manifest.json", "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def window_errors(errors, window, log_every):
    """Mean error over the last ``window`` samples at every ``log_every``-th sample.

    ``errors`` is (..., n) boolean; returns (indices, (..., n_logs) rates).
    Windows shorter than ``window`` (early in the stream) use what is available.
    """
    n = errors.shape[-1]
    idx = np.arange(log_every, n + 1, log_every)
    if idx.size == 0 or idx[-1] != n:
        idx = np.append(idx, n)
    c = np.concatenate([np.zeros(errors.shape[:-1] + (1,)), np.cumsum(errors, axis=-1)], axis=-1)
    lo = np.maximum(idx - window, 0)
    return idx, (c[..., idx] - c[..., lo]) / (idx - lo)


# -- teacher-student -----------------------------------------------------------

def _teacher_m(topo):
    m = topo.input_dim
    if topo.layer_widths != (m, m, 1):
        raise ValueError(f"teacher-student needs an M x M x 1 architecture, got {topo}")
    if m % 2 == 0:
        raise ValueError(f"M must be odd, got {m}")
    return m


def dump_trace(params: PosteriorParams, X, Y, n_steps, path, eps=EPS):
    """Write every forward and backward quantity of the first ``n_steps`` updates."""
    params = params.copy()
    rows = []
    for n in range(min(n_steps, len(X))):
        params, fwd, bwd = engine.update_step(params, LabeledSample(X[n], Y[n]), eps)
        named = [("mu", fwd.mu), ("sigma2", fwd.sigma2), ("nu", fwd.nu[1:]),
                 ("mu_excl", bwd.mu_excl), ("G", bwd.G), ("R", bwd.R), ("Delta", bwd.Delta[:-1])]
        for kind, arrays in named:
            for l, a in enumerate(arrays, 1):
                for i, v in np.ndenumerate(a):
                    rows.append([n, kind, l, ":".join(str(k) for k in i), repr(float(v))])
    _write_csv(path, ["step", "quantity", "layer", "index", "value"], rows)


def run_teacher_student(cfg: RunConfig, log=print):
    topo = parse_arch(cfg.arch)
    m = _teacher_m(topo)
    eta = cfg.eta if cfg.eta is not None else backprop.teacher_eta(m)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    run_id = f"ts-M{m}-seed{cfg.seed}"
    T, N, algos = cfg.trials, cfg.samples, cfg.algorithms
    use_mfb = bool({"mfb", "pmfb"} & set(algos))
    use_bp = bool({"backprop", "clipped"} & set(algos))

    seeds = {}
    X, Y, Xt, Yt, h0, w0 = [], [], [], [], [], []
    for t in range(T):
        s_teacher, s_train, s_test, s_mfb, s_bp = _seeds(cfg.seed, t, n=5)
        seeds[f"trial{t}"] = dict(teacher=s_teacher, train=s_train, test=s_test, mfb_init=s_mfb, bp_init=s_bp)
        teacher = make_teacher(m, s_teacher)
        x, y = sample_stream(teacher, N, s_train)
        xt, yt = sample_stream(teacher, cfg.test_samples, s_test)
        X.append(x), Y.append(y), Xt.append(xt), Yt.append(yt)
        h0.append(init_prior(topo, s_mfb))
        w0.append(backprop.init_weights(topo, s_bp, eta))
    X = np.stack(X).astype(float)
    Y = np.stack(Y).astype(float)

    files = ["training.csv", "test.csv", "summary.csv"]
    if cfg.trace_steps:
        dump_trace(h0[0], X[0], Y[0], cfg.trace_steps, out / "trace.csv", cfg.eps)
        files.append("trace.csv")

    learner = MFBLearner(PosteriorParams.stack(h0), cfg.eps) if use_mfb else None
    bp = backprop.RealNetParams.stack(w0) if use_bp else None
    errors = {a: np.zeros((T, N), dtype=bool) for a in algos}
    report = max(N // 10, 1)
    for n in range(N):
        x, y = X[:, n], Y[:, n]
        if use_mfb:
            if "mfb" in algos:
                pred = predictor.bmnn_eval(learner.map_weights(), x)
                errors["mfb"][:, n] = pred[:, 0] != y[:, 0]
            nu = learner.step(x, y)
            if "pmfb" in algos:
                errors["pmfb"][:, n] = np.where(nu[:, 0] >= 0, 1.0, -1.0) != y[:, 0]
        if use_bp:
            if "clipped" in algos:
                pred = posterior.sign(backprop.clipped_output(bp, x))
                errors["clipped"][:, n] = pred[:, 0] != y[:, 0]
            u = backprop.train_step(bp, x, y)
            if "backprop" in algos:
                errors["backprop"][:, n] = np.where(u[:, 0] >= 0, 1.0, -1.0) != y[:, 0]
        if log and (n + 1) % report == 0:
            log(f"[{run_id}] {n + 1}/{N} samples")

    train_rows, test_rows, summary_rows = [], [], []
    test_err = {a: np.zeros(T) for a in algos}
    final_window = {}
    for a in algos:
        idx, rates = window_errors(errors[a], cfg.window, cfg.log_every)
        final_window[a] = rates[:, -1]
        for t in range(T):
            train_rows.extend([run_id, a, t, int(i), _fmt(r)] for i, r in zip(idx, rates[t]))
    for t in range(T):
        xt, yt = Xt[t].astype(float), Yt[t][:, 0].astype(float)
        outs = {}
        if use_mfb:
            outs["mfb"] = predictor.bmnn_eval([w[t] for w in learner.map_weights()], xt)
            outs["pmfb"] = predictor.pmfb_output(learner.params[t], xt, cfg.eps)[1]
        if use_bp:
            outs["backprop"] = posterior.sign(backprop.rmnn_forward(bp[t], xt)[1][-1])
            outs["clipped"] = posterior.sign(backprop.clipped_output(bp[t], xt))
        for a in algos:
            test_err[a][t] = np.mean(outs[a][:, 0] != yt)
            test_rows.append([run_id, a, t, _fmt(test_err[a][t])])
    results = {}
    for a in algos:
        best = int(np.argmin(test_err[a]))
        results[a] = dict(best_trial=best, best_test_error=float(test_err[a][best]),
                          final_window_error=float(final_window[a][best]),
                          test_errors=[float(v) for v in test_err[a]],
                          min_window_errors=[_min_full_window(errors[a][t], cfg.window, cfg.log_every)
                                             for t in range(T)])
        summary_rows.append([run_id, a, best, _fmt(test_err[a][best]), _fmt(final_window[a][best])])
    _write_csv(out / "training.csv", TRAIN_FIELDS, train_rows)
    _write_csv(out / "test.csv", TEST_FIELDS, test_rows)
    _write_csv(out / "summary.csv", ["run_id", "algorithm", "best_trial", "best_test_error",
                                     "final_window_error"], summary_rows)
    _write_manifest(out, cfg, seeds, files, results)
    if log:
        for a in algos:
            log(f"[{run_id}] {a}: best test error {results[a]['best_test_error']:.4f} "
                f"(trial {results[a]['best_trial']})")
    return results


def _min_full_window(errors, window, log_every):
    """Lowest windowed error among log points whose window is complete (nan if none)."""
    idx, rates = window_errors(errors, window, log_every)
    full = idx >= window
    return float(rates[full].min()) if full.any() else float("nan")


# -- MNIST ---------------------------------------------------------------------

def _load_mnist(cfg):
    data_dir = cfg.data_dir or dataio.default_data_dir()
    tr_img, tr_lab, te_img, te_lab = dataio.load_mnist(data_dir)
    if cfg.max_train:
        tr_img, tr_lab = tr_img[:cfg.max_train], tr_lab[:cfg.max_train]
    if cfg.max_test:
        te_img, te_lab = te_img[:cfg.max_test], te_lab[:cfg.max_test]
    Xtr, Xte, _ = dataio.preprocess(tr_img, te_img)
    return Xtr, tr_lab.astype(int), Xte, te_lab.astype(int)


def mnist_scores(algo, model, X, eps=EPS, chunk=1000):
    """Per-class scores whose argmax is the predicted label.

    mfb: output-layer sums of the MAP network; pmfb: mu_L / sigma_L of the
    ensemble mean; backprop and clipped: output-layer inputs u_L.
    """
    parts = []
    for s in range(0, len(X), chunk):
        x = X[s:s + chunk]
        if algo == "mfb":
            parts.append(predictor.bmnn_output_sums(model, x))
        elif algo == "pmfb":
            parts.append(model.predict_scores(x))
        elif algo == "backprop":
            parts.append(backprop.rmnn_forward(model, x)[0][-1])
        elif algo == "clipped":
            clipped = backprop.RealNetParams(model.topology, backprop.clipped_weights(model), model.eta)
            parts.append(backprop.rmnn_forward(clipped, x)[0][-1])
        else:
            raise ValueError(algo)
    return np.concatenate(parts)


def mnist_test_errors(algos, learner, bp, X, labels, eps=EPS):
    errs = {}
    for a in algos:
        if a == "mfb":
            model = learner.map_weights()
        elif a == "pmfb":
            model = learner
        else:
            model = bp
        errs[a] = float(np.mean(predictor.classify(mnist_scores(a, model, X, eps)) != labels))
    return errs


def run_mnist(cfg: RunConfig, log=print):
    topo = parse_arch(cfg.arch)
    Xtr, ytr, Xte, yte = _load_mnist(cfg)
    if topo.input_dim != Xtr.shape[1] or topo.output_dim != 10:
        raise ValueError(f"architecture {topo} does not fit {Xtr.shape[1]} inputs and 10 classes")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    run_id = f"mnist-{topo}-seed{cfg.seed}"
    algos = cfg.algorithms
    use_mfb = bool({"mfb", "pmfb"} & set(algos))
    use_bp = bool({"backprop", "clipped"} & set(algos))
    eta = cfg.eta if cfg.eta is not None else backprop.MNIST_ETA
    s_mfb, s_bp = _seeds(cfg.seed, 0, n=2)
    epoch_seeds = [_seeds(cfg.seed, 1, e)[0] for e in range(cfg.epochs)]
    seeds = dict(mfb_init=s_mfb, bp_init=s_bp, epochs=epoch_seeds)
    learner = MFBLearner(init_prior(topo, s_mfb), cfg.eps) if use_mfb else None
    bp = backprop.init_weights(topo, s_bp, eta) if use_bp else None
    Ytr = dataio.encode_labels(ytr)

    # online errors come for free only where the update already computes the output
    online = [a for a in ("pmfb", "backprop") if a in algos]
    n_total = cfg.epochs * len(Xtr)
    errors = {a: np.zeros(n_total, dtype=bool) for a in online}
    epoch_rows = []
    errs = mnist_test_errors(algos, learner, bp, Xte, yte, cfg.eps)
    for a in algos:
        epoch_rows.append([run_id, a, 0, _fmt(errs[a])])
    if log:
        log(f"[{run_id}] epoch 0: " + ", ".join(f"{a} {errs[a]:.4f}" for a in algos))
    n = 0
    for e in range(cfg.epochs):
        order = np.random.default_rng(epoch_seeds[e]).permutation(len(Xtr))
        for r in order:
            x, y = Xtr[r], Ytr[r]
            if use_mfb:
                nu = learner.step(x, y)
                if "pmfb" in algos:
                    errors["pmfb"][n] = np.argmax(nu) != ytr[r]
            if use_bp:
                u = backprop.train_step(bp, x, y)
                if "backprop" in algos:
                    errors["backprop"][n] = np.argmax(u) != ytr[r]
            n += 1
        errs = mnist_test_errors(algos, learner, bp, Xte, yte, cfg.eps)
        for a in algos:
            epoch_rows.append([run_id, a, e + 1, _fmt(errs[a])])
        if log:
            log(f"[{run_id}] epoch {e + 1}: " + ", ".join(f"{a} {errs[a]:.4f}" for a in algos))

    files = ["epochs.csv", "test.csv", "training.csv"]
    train_rows = []
    for a in online:
        idx, rates = window_errors(errors[a], cfg.window, cfg.log_every)
        train_rows.extend([run_id, a, 0, int(i), _fmt(v)] for i, v in zip(idx, rates))
    _write_csv(out / "training.csv", TRAIN_FIELDS, train_rows)
    _write_csv(out / "epochs.csv", ["run_id", "algorithm", "epoch", "test_error"], epoch_rows)
    _write_csv(out / "test.csv", TEST_FIELDS, [[run_id, a, 0, _fmt(errs[a])] for a in algos])
    if cfg.save_models:
        if use_mfb:
            posterior.save(learner.params, out / "mfb_posterior.json")
            bitpack.save(bitpack.pack(learner.map_weights()), out / "mfb_map.bmnn")
            files += ["mfb_posterior.json", "mfb_map.bmnn"]
        if use_bp:
            backprop.save(bp, out / "backprop.json")
            files.append("backprop.json")
    _write_manifest(out, cfg, seeds, files, {"test_error": errs})
    return errs
