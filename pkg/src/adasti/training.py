"""Experiment setup, the training loop, evaluation and ablation runs."""
from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .baselines import baseline_mean, baseline_tli
from .checkpoint import Checkpoint
from .config import ExperimentConfig
from .data import (
    GraphSpec,
    MaskedSample,
    RawSeriesTable,
    build_adjacency,
    denormalize,
    fit_norm_stats,
    generate_block_mask,
    generate_random_mask,
    load_matrix_csv,
    load_series_csv,
    sample_rng,
    split_target_condition,
    window_and_normalize,
)
from .diffusion import diffusion_terms, impute, make_schedule
from .errors import ContractError, NonFiniteLossError
from .metrics import MetricsReport, metrics_report
from .model import AdaSTI
from .synthetic import ring_benchmark

log = logging.getLogger(__name__)

VARIANTS = ("no_bis4pi", "no_gated_attention")


def _stream_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass
class Split:
    observed: list[MaskedSample]  # what the model may see
    truth: list[MaskedSample]  # native observations only (ground truth)

    def targets(self) -> np.ndarray:
        return np.stack([t.M * (1.0 - o.M) for o, t in zip(self.observed, self.truth)])


@dataclass
class Experiment:
    config: ExperimentConfig
    table: RawSeriesTable
    graph: GraphSpec
    pattern_mask: np.ndarray  # timestamps x nodes
    train: Split
    val: Split
    test: Split
    norm_stats: object = None


def pattern_mask_for(cfg: ExperimentConfig, table: RawSeriesTable, graph: GraphSpec):
    T, N = table.shape
    seed = _stream_seed(cfg.seed, 1)
    if cfg.mask_path:
        mask = load_matrix_csv(cfg.mask_path)
        if mask.shape != (T, N):
            raise ContractError(f"mask shape {mask.shape} does not match data {(T, N)}")
        return mask
    if cfg.missing_pattern == "random":
        return generate_random_mask((T, N), cfg.missing_rate, seed)
    if cfg.missing_pattern == "block":
        return generate_block_mask((N, T), cfg.missing_rate, cfg.n_v, cfg.n_t, graph, seed).T
    return np.ones((T, N))


def load_graph(cfg: ExperimentConfig, node_ids) -> GraphSpec:
    mat = load_matrix_csv(cfg.graph_path)
    if cfg.graph_kind == "adjacency":
        return GraphSpec(mat, list(node_ids))
    return build_adjacency(mat, cfg.adjacency_threshold, node_ids)


def prepare_experiment(cfg: ExperimentConfig) -> Experiment:
    cfg.validate_paths()
    if cfg.data_path:
        table = load_series_csv(cfg.data_path, cfg.missing_token)
        graph = load_graph(cfg, table.node_ids)
    else:
        table, graph = ring_benchmark(
            cfg.synthetic_nodes, cfg.synthetic_windows, cfg.L, cfg.synthetic_noise,
            seed=cfg.seed, threshold=cfg.adjacency_threshold,
        )
    if graph.num_nodes != table.shape[1]:
        raise ContractError("graph and data disagree on the number of nodes")
    pattern = pattern_mask_for(cfg, table, graph)
    T = table.shape[0]
    n_windows = (T - cfg.L) // cfg.stride + 1
    n_train = max(1, int(n_windows * cfg.train_fraction))
    n_val = int(n_windows * cfg.val_fraction)
    train_end = (n_train - 1) * cfg.stride + cfg.L
    stats = fit_norm_stats(table.values[:train_end], (table.mask * pattern)[:train_end], table.node_ids)
    observed = window_and_normalize(table, cfg.L, cfg.stride, mask=pattern, stats=stats)
    truth = window_and_normalize(table, cfg.L, cfg.stride, stats=stats)

    def split(lo, hi):
        return Split(observed[lo:hi], truth[lo:hi])

    return Experiment(
        cfg, table, graph, pattern,
        train=split(0, n_train),
        val=split(n_train, n_train + n_val),
        test=split(n_train + n_val, n_windows),
        norm_stats=stats,
    )


def _stack(samples, attr, dtype=torch.float32):
    return torch.as_tensor(np.stack([getattr(s, attr) for s in samples]), dtype=dtype)


def total_loss(model, X, M_ta, M_co, sched, lam, generator, literal=False):
    """Noise-prediction loss plus ``lam`` times the pre-imputation losses.

    Returns ``(total, diffusion_part, auxiliary_part)``.
    """
    if lam < 0:
        raise ContractError("lam must be >= 0")
    diff, pre = diffusion_terms(model, X, M_ta, M_co, sched, generator)
    if lam == 0:
        return diff, diff, diff.new_zeros(())
    aux = model.auxiliary_loss(X, M_co, pre, literal)
    return diff + lam * aux, diff, aux


def impute_windows(model, samples, sched, k, seed, literal=False, batch=64, dtype=torch.float32):
    """Median-of-k imputation of many windows; observed entries copied from input."""
    out = []
    for i in range(0, len(samples), batch):
        chunk = samples[i : i + batch]
        X, M = _stack(chunk, "X", dtype), _stack(chunk, "M", dtype)
        res = impute(model, X, M, sched, k=k, seed=_stream_seed(seed, i), literal=literal)
        Xn = np.stack([s.X for s in chunk])
        Mn = np.stack([s.M for s in chunk])
        out.append(np.where(Mn > 0, Xn, res.median))
    return np.concatenate(out)


def _validation_pairs(split: Split, cfg: ExperimentConfig):
    pairs = []
    for i, s in enumerate(split.observed):
        if s.M.sum() < 2:
            continue
        p = split_target_condition(s.M, cfg.missing_rate, sample_rng(cfg.seed, 10**6, i))
        pairs.append((s, p))
    return pairs


def _validation_mae(model, pairs, cfg, sched):
    if not pairs:
        return float("nan")
    conds = [
        MaskedSample(np.where(p.M_co > 0, s.X, 0.0), p.M_co, s.norm_stats, s.start)
        for s, p in pairs
    ]
    pred = impute_windows(model, conds, sched, cfg.val_k, cfg.seed, cfg.literal_reverse_coeffs)
    errs, n = 0.0, 0
    for (s, p), yhat in zip(pairs, pred):
        diff = denormalize(s, yhat) - denormalize(s, s.X)
        errs += np.abs(diff)[p.M_ta > 0].sum()
        n += int(p.M_ta.sum())
    return errs / n


def build_model(cfg: ExperimentConfig, graph: GraphSpec) -> AdaSTI:
    torch.manual_seed(cfg.seed)
    return AdaSTI(cfg.model(), graph.adjacency)


def train(cfg: ExperimentConfig, experiment: Experiment | None = None, progress=None) -> Checkpoint:
    """Train on the experiment's training windows; keep the best-validation weights."""
    torch.use_deterministic_algorithms(True)
    exp = experiment or prepare_experiment(cfg)
    sched = make_schedule(cfg.num_steps, cfg.beta_min, cfg.beta_max, cfg.schedule)
    model = build_model(cfg, exp.graph)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    milestones = sorted({max(1, int(cfg.epochs * 0.75)), max(1, int(cfg.epochs * 0.9))})
    lr_sched = torch.optim.lr_scheduler.MultiStepLR(opt, milestones, gamma=0.1)

    train_samples = [s for s in exp.train.observed if s.M.sum() > 0]
    val_pairs = _validation_pairs(exp.val, cfg)
    history = {"loss": [], "diffusion": [], "auxiliary": [], "val_mae": []}
    best_state, best_val, best_epoch = None, float("inf"), 0
    step = 0
    for epoch in range(cfg.epochs):
        model.train()
        order = sample_rng(cfg.seed, epoch).permutation(len(train_samples))
        sums = np.zeros(3)
        batches = 0
        for b in range(0, len(order), cfg.batch_size):
            idx = order[b : b + cfg.batch_size]
            chunk = [train_samples[i] for i in idx]
            pairs = [
                split_target_condition(s.M, cfg.target_fraction, sample_rng(cfg.seed, epoch, i))
                for s, i in zip(chunk, idx)
            ]
            X = _stack(chunk, "X")
            M_ta = torch.as_tensor(np.stack([p.M_ta for p in pairs]), dtype=torch.float32)
            M_co = torch.as_tensor(np.stack([p.M_co for p in pairs]), dtype=torch.float32)
            gen = torch.Generator().manual_seed(_stream_seed(cfg.seed, epoch, b))
            loss, diff, aux = total_loss(
                model, X, M_ta, M_co, sched, cfg.lam, gen, cfg.literal_reconstruction
            )
            opt.zero_grad()
            loss.backward()
            grad_norm = float(torch.nn.utils.clip_grad_norm_(model.parameters(), float("inf")))
            if not torch.isfinite(loss):
                raise NonFiniteLossError(step, opt.param_groups[0]["lr"], grad_norm, loss.item())
            opt.step()
            step += 1
            sums += [loss.item(), diff.item(), aux.item()]
            batches += 1
        lr_sched.step()
        for key, v in zip(("loss", "diffusion", "auxiliary"), sums / max(batches, 1)):
            history[key].append(float(v))

        last = epoch == cfg.epochs - 1
        if val_pairs and ((epoch + 1) % cfg.val_every == 0 or last):
            model.eval()
            val = _validation_mae(model, val_pairs, cfg, sched)
            history["val_mae"].append((epoch + 1, float(val)))
            if val < best_val:
                best_val, best_epoch = val, epoch + 1
                best_state = copy.deepcopy(model.state_dict())
        msg = f"epoch {epoch + 1}/{cfg.epochs} loss {history['loss'][-1]:.4f}"
        log.info(msg)
        if progress:
            progress(msg)

    if best_state is None:
        best_state, best_epoch = copy.deepcopy(model.state_dict()), cfg.epochs
    history["best_epoch"] = best_epoch
    return Checkpoint(
        config=cfg,
        model_state=best_state,
        adjacency=exp.graph.adjacency,
        norm_mean=exp.norm_stats.mean,
        norm_std=exp.norm_stats.std,
        epoch=cfg.epochs,
        optimizer_state=opt.state_dict(),
        rng_state=torch.get_rng_state(),
        history=history,
    )


def evaluate_split(model, split: Split, cfg: ExperimentConfig, k=None, label="adasti"):
    """Median-of-k imputation of every window, scored in sensor units on targets."""
    start = time.perf_counter()
    sched = make_schedule(cfg.num_steps, cfg.beta_min, cfg.beta_max, cfg.schedule)
    model.eval()
    pred = impute_windows(model, split.observed, sched, k or cfg.k, cfg.seed, cfg.literal_reverse_coeffs)
    return _report(pred, split, cfg, label, time.perf_counter() - start)


def evaluate_baseline(split: Split, cfg: ExperimentConfig, which="tli") -> MetricsReport:
    start = time.perf_counter()
    fn = {"tli": baseline_tli, "mean": baseline_mean}[which]
    pred = np.stack([fn(s.X, s.M) for s in split.observed])
    return _report(pred, split, cfg, which, time.perf_counter() - start)


def _report(pred, split: Split, cfg, label, elapsed) -> MetricsReport:
    pred_units = np.stack([denormalize(s, p) for s, p in zip(split.observed, pred)])
    truth_units = np.stack([denormalize(t, t.X) for t in split.truth])
    return metrics_report(
        pred_units, truth_units, split.targets(),
        config_fingerprint=cfg.fingerprint(), seed=cfg.seed, wall_clock=elapsed, label=label,
    )


def evaluate(ckpt: Checkpoint, experiment: Experiment | None = None, k=None) -> MetricsReport:
    exp = experiment or prepare_experiment(ckpt.config)
    return evaluate_split(ckpt.build_model(), exp.test, ckpt.config, k)


def ablation_config(cfg: ExperimentConfig, variant: str) -> ExperimentConfig:
    if variant not in VARIANTS:
        raise ContractError(f"variant must be one of {VARIANTS}")
    return cfg.with_(**{variant: True})


def run_ablation(cfg: ExperimentConfig, variant: str, experiment=None, k=None, progress=None):
    vcfg = ablation_config(cfg, variant)
    exp = experiment or prepare_experiment(vcfg)
    ckpt = train(vcfg, exp, progress)
    report = evaluate_split(ckpt.build_model(), exp.test, vcfg, k, label=variant)
    return report, ckpt


def window_starts(T: int, L: int) -> list[int]:
    """Non-overlapping starts plus a final window flush with the end."""
    if L > T:
        raise ContractError(f"window length {L} exceeds series length {T}")
    starts = list(range(0, T - L + 1, L))
    if starts[-1] != T - L:
        starts.append(T - L)
    return starts


def impute_series(ckpt: Checkpoint, table: RawSeriesTable, mask=None, k=None, seed=None):
    """Impute a whole (timestamps x nodes) table with a trained checkpoint.

    Returns values in sensor units; entries observed in ``table`` (and kept
    by ``mask``) are copied through unchanged.
    """
    cfg = ckpt.config
    if table.shape[1] != len(ckpt.adjacency):
        raise ContractError("table and checkpoint disagree on the number of nodes")
    T, _ = table.shape
    M = table.mask if mask is None else table.mask * np.asarray(mask, dtype=np.float64)
    stats = ckpt.norm_stats
    Z = np.where(M > 0, (np.nan_to_num(table.values) - stats.mean) / stats.std, 0.0)
    starts = window_starts(T, cfg.L)
    samples = [MaskedSample(Z[s : s + cfg.L].T.copy(), M[s : s + cfg.L].T.copy(), stats, s)
               for s in starts]
    sched = make_schedule(cfg.num_steps, cfg.beta_min, cfg.beta_max, cfg.schedule)
    pred = impute_windows(ckpt.build_model(), samples, sched, k or cfg.k,
                          cfg.seed if seed is None else seed, cfg.literal_reverse_coeffs)
    out = np.empty(table.shape)
    for s, p in zip(samples, pred):
        out[s.start : s.start + cfg.L] = denormalize(s, p).T
    return np.where(M > 0, table.values, out)
