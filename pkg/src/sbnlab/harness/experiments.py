"""Experiment drivers: autoencoder training, estimator accuracy, Gumbel sweep,
BayesBiNN collapse demo and a tiny classifier.

Every random draw comes from :func:`sbnlab.streams.child` with labels naming
its role, so reruns with the same configuration produce identical files.
"""

from __future__ import annotations

import os

import numpy as np

from .. import noise as noise_mod
from ..estimators import (EstimatorKind, estimate, exact_gradient_enum, expected_loss_enum,
                          local_expectations_avg, st_backward)
from ..estimators.gumbel import (exact_unit_gradient, gs_bias_quadrature, gs_gradient,
                                 gs_threshold_probability, gs_threshold_probability_mc,
                                 gs_variance_quadrature)
from ..losses import CategoricalNLL, MultinomialReconstruction
from ..metrics import CSV_COLUMNS, CellStats, measure
from ..optim import OptimizerState, bayesbinn_collapsed_step, bayesbinn_step
from ..sbn import (SignActivation, forward_det, forward_ensemble, forward_sample, init_network,
                   update_running_stats)
from ..streams import child
from .config import ExperimentConfig, defaults
from .data import load_source
from .io import (file_sha256, load_checkpoint, network_tensors, restore_network,
                 save_checkpoint, write_csv, write_json)

REFERENCE_NOTE = ("unbiased reference: exact enumeration when the latent code is small enough, "
                  "otherwise averaged local expectations; used in place of ARM")

WARM_ETA = 12.0


def output_dir(cfg: ExperimentConfig) -> str:
    return os.environ.get("SBNLAB_OUT") or cfg.get("experiment", "output")


# ---------------------------------------------------------------------------
# autoencoder


def build_autoencoder(cfg: ExperimentConfig, vocab: int, rng) -> object:
    net_cfg = cfg.section("network")
    nz = cfg.section("noise")
    h, n, enc = net_cfg["hidden"], net_cfg["bits"], net_cfg["encoding"]
    skel = (f"linear:{h},relu,linear:{n},sign:{nz['kind']}:{enc},"
            f"linear:{h},relu,linear:{vocab},softmax")
    net = init_network(vocab, skel, rng)
    if nz["scale"] is not None:
        for layer in net.layers:
            if isinstance(layer, SignActivation):
                layer.noise = noise_mod.NoiseModel(nz["kind"], nz["scale"])
    return net


class AutoencoderTask:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        data = load_source(cfg.get("data", "source"), cfg.get("data", "top_words"))
        self.counts = data.dense()
        self.X = data.frequencies()
        self.seed = cfg.get("experiment", "base_seed")
        self.net = build_autoencoder(cfg, self.counts.shape[1], child(self.seed, "init"))
        self.bits = cfg.get("network", "bits")

    def loss(self, idx=None):
        return MultinomialReconstruction(self.counts if idx is None else self.counts[idx])

    def inputs(self, idx=None):
        return self.X if idx is None else self.X[idx]

    def dataset_loss(self) -> float:
        """Expected loss per document (exact when enumeration is affordable)."""
        if self.bits <= self.cfg.get("experiment", "exact_max_bits"):
            return expected_loss_enum(self.net, self.X, self.loss())
        rng = child(self.seed, "eval-loss")
        vals = [np.mean(self.loss().value(forward_sample(self.net, self.X, rng).output)) for _ in range(100)]
        return float(np.mean(vals))

    def make_optimizer(self):
        o = self.cfg.section("optim")
        kind = o["kind"] if o["kind"] in ("sgd", "adam") else "adam"
        return OptimizerState.for_network(self.net, kind=kind, lr=o["lr"])

    def train(self, estimator: str, epochs: int, phase: str, opt, records, epoch0=0,
              on_epoch=None, track_loss=True):
        net = self.net
        D = self.X.shape[0]
        bs = self.cfg.get("experiment", "batch_size")
        kind = EstimatorKind.parse(estimator)
        for ep in range(epoch0 + 1, epoch0 + epochs + 1):
            perm = child(self.seed, "perm", phase, ep).permutation(D)
            for step, s in enumerate(range(0, D, bs)):
                idx = perm[s:s + bs]
                rng = child(self.seed, "train", phase, ep, step)
                est = estimate(kind, net, self.inputs(idx), self.loss(idx), rng=rng)
                net.set_flat(opt.step(net.get_flat(), est.grad))
            if track_loss:
                records.append({"epoch": ep, "phase": phase, "estimator": str(kind),
                                "loss": self.dataset_loss()})
            if on_epoch is not None:
                on_epoch(ep)
        return epoch0 + epochs


def run_autoencoder(cfg: ExperimentConfig) -> dict:
    """Train with the candidate estimator, then switch to the unbiased reference."""
    task = AutoencoderTask(cfg)
    out = output_dir(cfg)
    ex = cfg.section("experiment")
    ckdir = os.path.join(out, "checkpoints")
    every = ex["checkpoint_every"]
    checkpoints = []

    def save(ep):
        if ep == 0 or ep % every == 0:
            path = os.path.join(ckdir, f"autoenc_{ep:05d}.ckpt")
            checkpoints.append((ep, path, save_checkpoint(network_tensors(task.net), path)))

    records = [{"epoch": 0, "phase": "init", "estimator": "", "loss": task.dataset_loss()}]
    save(0)
    opt = task.make_optimizer()
    ep = task.train(ex["estimator"], ex["train_epochs"], "train", opt, records, 0, save)
    switch_loss = records[-1]["loss"]
    opt.reset()  # fresh running averages for the correction phase
    task.train(ex["reference"], ex["correction_epochs"], "correct", opt, records, ep, save)
    path = write_csv(records, os.path.join(out, "autoenc_loss.csv"), ["epoch", "phase", "estimator", "loss"])
    return {"records": records, "switch_loss": switch_loss, "final_loss": records[-1]["loss"],
            "csv": path, "checkpoints": checkpoints}


# ---------------------------------------------------------------------------
# estimator accuracy


def measurement_batches(task: AutoencoderTask):
    """Fixed contiguous batches over the document order."""
    D = task.X.shape[0]
    bs = task.cfg.get("experiment", "batch_size")
    return [np.arange(s, min(s + bs, D)) for s in range(0, D, bs)]


def reference_gradient(task: AutoencoderTask, ckpt_id, idx=None, batch=0):
    """Unbiased reference on the documents ``idx`` (all when ``None``)."""
    ex = task.cfg.section("experiment")
    x, loss = task.inputs(idx), task.loss(idx)
    if task.bits <= ex["exact_max_bits"]:
        return exact_gradient_enum(task.net, x, loss).grad, "exact_enum"
    K = ex["reference_K"]
    rng = child(task.seed, "reference", ckpt_id, batch)
    return local_expectations_avg(task.net, x, rng, loss, K).grad, f"local_expectations_avg(K={K})"


def run_accuracy_protocol(cfg: ExperimentConfig) -> dict:
    """Measure candidate estimators at checkpoints of a reference-trained run."""
    task = AutoencoderTask(cfg)
    ex = cfg.section("experiment")
    out = output_dir(cfg)
    ckdir = os.path.join(out, "checkpoints")
    every = ex["checkpoint_every"]
    ckpts = []

    def save(ep):
        if ep % every == 0:
            path = os.path.join(ckdir, f"accuracy_{ep:05d}.ckpt")
            save_checkpoint(network_tensors(task.net), path)
            ckpts.append((ep, path))

    opt = task.make_optimizer()
    train_records = []
    task.train(ex["reference"], ex["train_epochs"], "reference", opt, train_records, 0, save,
               track_loss=False)
    if not ckpts:
        raise ValueError("no checkpoints: train_epochs must be at least checkpoint_every")

    rows = []
    meta = {"reference_note": REFERENCE_NOTE, "checkpoints": {}, "trajectory_estimator": ex["reference"]}
    lr = cfg.get("optim", "lr")
    for ep, path in ckpts:
        if not os.path.exists(path):
            raise FileNotFoundError(f"checkpoint missing: {path}")
        restore_network(task.net, load_checkpoint(path))
        batches = measurement_batches(task)
        refs = []
        for b, idx in enumerate(batches):
            g, method = reference_gradient(task, ep, idx, b)
            refs.append(g)
        meta["checkpoints"][str(ep)] = {"sha256": file_sha256(path), "reference": method}
        for cand in ex["candidates"]:
            stats = candidate_stats(task, cand, ep, ex["trials"], batches, refs)
            rows.append(measure(stats, ep, cand, eps=lr))
    csv = write_csv(rows, os.path.join(out, "accuracy.csv"), CSV_COLUMNS)
    write_json(meta, os.path.join(out, "accuracy_meta.json"))
    return {"rows": rows, "csv": csv, "meta": meta, "train": train_records}


def candidate_stats(task: AutoencoderTask, cand: str, ckpt_id, T: int, batches, refs) -> CellStats:
    """Per-cell statistics on the trial-major grid ``(t, b)``.

    Trial ``t`` draws every batch from the stream ``child(seed, checkpoint,
    estimator, t)``; deterministic estimators are evaluated once per batch.
    """
    kind = EstimatorKind.parse(cand)
    stats = CellStats()
    if kind.name in ("exact_enum", "det_st"):
        fixed = [estimate(kind, task.net, task.inputs(idx), task.loss(idx)).grad for idx in batches]
        for _ in range(T):
            for g, ref in zip(fixed, refs):
                stats.add(ref, g)
        return stats
    for t in range(T):
        rng = child(task.seed, ckpt_id, str(kind), t)
        for idx, ref in zip(batches, refs):
            stats.add(ref, estimate(kind, task.net, task.inputs(idx), task.loss(idx), rng=rng).grad)
    return stats


# ---------------------------------------------------------------------------
# Gumbel sweep


def _square_derivative(v):
    return 2.0 * np.asarray(v)


def run_gumbel_sweep(cfg: ExperimentConfig | None = None, taus=None) -> dict:
    """Monte Carlo against quadrature for ``L(v) = v^2`` on one unit."""
    cfg = cfg or defaults()
    g = cfg.section("gumbel")
    taus = g["taus"] if taus is None else list(taus)
    if any(not t > 0 for t in taus):
        raise ValueError("tau must be positive")
    eta, draws, eps = g["eta"], g["draws"], g["eps"]
    seed = cfg.get("experiment", "base_seed")
    exact = exact_unit_gradient(_square_derivative, eta)
    rows = []
    for tau in taus:
        rng = child(seed, "gumbel", repr(float(tau)))
        samples = gs_gradient(np.full(draws, eta), tau, rng, _square_derivative).grad
        rows.append({
            "tau": float(tau), "eta": float(eta),
            "empirical_bias": float(samples.mean() - exact),
            "bias_se": float(samples.std(ddof=1) / np.sqrt(draws)),
            "quadrature_bias": gs_bias_quadrature(_square_derivative, eta, tau),
            "empirical_variance": float(samples.var(ddof=1)),
            "quadrature_variance": gs_variance_quadrature(_square_derivative, eta, tau),
            "threshold_closed": gs_threshold_probability(eta, tau, eps),
            "threshold_mc": gs_threshold_probability_mc(eta, tau, eps, child(seed, "threshold", repr(float(tau))), draws),
        })
    path = write_csv(rows, os.path.join(output_dir(cfg), "gumbel.csv"), list(rows[0].keys()))
    return {"rows": rows, "csv": path}


# ---------------------------------------------------------------------------
# BayesBiNN


def bayesbinn_problem(dim: int, seed: int):
    rng = child(seed, "bayesbinn", "problem")
    A = rng.normal(size=(dim + dim // 2, dim)) / np.sqrt(dim)
    y = rng.normal(size=A.shape[0])
    eta_bar0 = 0.1 * rng.normal(size=dim)

    def grad(w):
        return A.T @ (A @ w - y)
    return grad, eta_bar0


def run_bayesbinn_pair(grad, eta_bar0, tau, N, alpha, eps_gs, steps, rng):
    """Replica started at ``(N / tau) eta_bar0`` next to the collapsed form."""
    eta = eta_bar0 * (N / tau)
    eb = eta_bar0.copy()
    rows, replica_bits, collapsed_bits = [], [], []
    for t in range(1, steps + 1):
        eta, info = bayesbinn_step(eta, grad, rng, alpha, tau, eps_gs, N)
        eb, cinfo = bayesbinn_collapsed_step(eb, grad, alpha)
        rb = np.where(info["w_b"] >= 0, 1.0, -1.0)
        replica_bits.append(rb)
        collapsed_bits.append(cinfo["w_b"])
        rows.append({"step": t, "mismatches": int(np.sum(rb != cinfo["w_b"])),
                     "max_abs_eta": float(np.max(np.abs(eta))), "min_abs_eta": float(np.min(np.abs(eta))),
                     "s_mean": float(np.mean(info["s"])), "s_max": float(np.max(info["s"]))})
    return rows, np.array(replica_bits), np.array(collapsed_bits)


def coincide_from(rows) -> int:
    """First step after which every later step has zero mismatches (-1 if never)."""
    last_bad = 0
    for r in rows:
        if r["mismatches"]:
            last_bad = r["step"]
    return -1 if last_bad == rows[-1]["step"] else last_bad + 1


def run_bayesbinn_demo(cfg: ExperimentConfig | None = None) -> dict:
    cfg = cfg or defaults()
    b, o = cfg.section("bayesbinn"), cfg.section("optim")
    seed = cfg.get("experiment", "base_seed")
    grad, eta_bar0 = bayesbinn_problem(b["dim"], seed)
    rows, summary, runs = [], [], {}
    for spec in b["runs"]:
        tau_s, n_s = spec.split(":")
        tau, N = float(tau_s), float(n_s)
        rng = child(seed, "bayesbinn", spec)
        r, rb, cb = run_bayesbinn_pair(grad, eta_bar0, tau, N, o["alpha"], o["eps_gs"], b["steps"], rng)
        runs[spec] = {"rows": r, "replica_bits": rb, "collapsed_bits": cb}
        warm = next((x["step"] for x in r if x["min_abs_eta"] > WARM_ETA), -1)
        summary.append({"run": spec, "tau": tau, "N": N, "coincide_from": coincide_from(r),
                        "mismatch_steps": sum(1 for x in r if x["mismatches"]), "warm_step": warm})
        rows.extend({"run": spec, "tau": tau, "N": N, **x} for x in r)
    out = output_dir(cfg)
    cols = ["run", "tau", "N", "step", "mismatches", "max_abs_eta", "min_abs_eta", "s_mean", "s_max"]
    path = write_csv(rows, os.path.join(out, "bayesbinn.csv"), cols)
    spath = write_csv(summary, os.path.join(out, "bayesbinn_summary.csv"),
                      ["run", "tau", "N", "coincide_from", "mismatch_steps", "warm_step"])
    return {"rows": rows, "summary": summary, "runs": runs, "csv": path, "summary_csv": spath}


# ---------------------------------------------------------------------------
# tiny classifier


def blobs(samples, features, classes, seed):
    rng = child(seed, "blobs")
    centers = 2.0 * rng.normal(size=(classes, features))
    y = rng.integers(0, classes, size=samples)
    X = centers[y] + rng.normal(size=(samples, features))
    return X, y


def run_tiny_classifier(cfg: ExperimentConfig) -> dict:
    """Deep SBN with binary weights and batch norm trained by ST."""
    c = cfg.section("classifier")
    seed = cfg.get("experiment", "base_seed")
    X, y = blobs(2 * c["samples"], c["features"], c["classes"], seed)
    Xtr, ytr, Xte, yte = X[::2], y[::2], X[1::2], y[1::2]
    net = init_network(c["features"], cfg.get("network", "skeleton"), child(seed, "init"))
    if net.output_dim != c["classes"]:
        raise ValueError(f"skeleton output dim {net.output_dim} differs from classes {c['classes']}")
    opt = OptimizerState.for_network(net, kind="adam", lr=cfg.get("optim", "lr"))
    bs = cfg.get("experiment", "batch_size")
    rows = []
    for ep in range(1, c["epochs"] + 1):
        perm = child(seed, "perm", ep).permutation(len(ytr))
        losses = []
        for step, s in enumerate(range(0, len(ytr), bs)):
            idx = perm[s:s + bs]
            rng = child(seed, "train", ep, step)
            tape = forward_sample(net, Xtr[idx], rng)
            est = st_backward(tape, CategoricalNLL(ytr[idx]))
            update_running_stats(net, tape)
            net.set_flat(opt.step(net.get_flat(), est.grad))
            losses.append(est.value)
        det_out, _ = forward_det(net, Xte)
        ens = forward_ensemble(net, Xte, c["ensemble"], child(seed, "ensemble", ep))
        rows.append({"epoch": ep, "train_loss": float(np.mean(losses)),
                     "det_accuracy": float(np.mean(det_out.argmax(1) == yte)),
                     "ensemble_accuracy": float(np.mean(ens.argmax(1) == yte))})
    path = write_csv(rows, os.path.join(output_dir(cfg), "classifier.csv"),
                     ["epoch", "train_loss", "det_accuracy", "ensemble_accuracy"])
    return {"rows": rows, "csv": path}

