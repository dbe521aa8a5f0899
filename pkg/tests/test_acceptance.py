"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict that is printed in the terminal
summary. The synthetic benchmark (criteria 8 and 9) trains three models
and takes roughly half an hour on one CPU core.
"""
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
import torch

from adasti.checkpoint import load_checkpoint, save_checkpoint
from adasti.config import ExperimentConfig, ModelConfig, load_config
from adasti.data import (
    RawSeriesTable,
    block_nodes,
    build_adjacency,
    generate_block_mask,
    generate_random_mask,
    split_target_condition,
)
from adasti.diffusion import impute, make_schedule, q_sample, reverse_step
from adasti.layers import TEMPORAL
from adasti.model import AdaSTI
from adasti.nast import GatedAttention
from adasti.s4 import SSMParams, compute_kernel, discretize, hippo_init, s4_apply_conv, s4_apply_recurrent
from adasti.training import (
    evaluate,
    evaluate_baseline,
    evaluate_split,
    impute_series,
    prepare_experiment,
    run_ablation,
    total_loss,
    train,
)

ROOT = Path(__file__).resolve().parents[1]
SYNTHETIC_CFG = ROOT / "configs" / "synthetic_desk.cfg"
f64 = torch.float64


@contextmanager
def criterion(log, number, title):
    """Record PASS/FAIL for a criterion; details may be appended via the yielded list."""
    notes = []
    try:
        yield notes
    except BaseException:
        log[number] = f"criterion {number:2d} FAIL  {title} {'; '.join(notes)}".rstrip()
        raise
    verdict = "FLAG" if any(n.startswith("FLAG") for n in notes) else "PASS"
    log[number] = f"criterion {number:2d} {verdict}  {title} {'; '.join(notes)}".rstrip()


# ---------------------------------------------------------------- 1


def test_c01_s4_duality(acceptance):
    with criterion(acceptance, 1, "S4 conv/recurrent duality") as notes:
        rng = np.random.default_rng(2024)
        start = time.perf_counter()
        worst = 0.0
        for _ in range(100):
            d = int(rng.integers(1, 17))
            L = int(rng.integers(1, 257))
            A = torch.as_tensor(hippo_init(d)) + 0.1 * torch.as_tensor(rng.normal(size=(d, d)))
            p = SSMParams(A, torch.as_tensor(rng.normal(size=(d, 1))),
                          torch.as_tensor(rng.normal(size=(1, d))), float(rng.uniform(0.01, 0.5)))
            ssm = discretize(p)
            u = torch.as_tensor(rng.normal(size=L))
            y_conv = s4_apply_conv(u, compute_kernel(ssm, L))
            y_rec = s4_apply_recurrent(u, ssm)
            rel = ((y_conv - y_rec).abs().max() / y_rec.abs().max().clamp_min(1e-12)).item()
            worst = max(worst, rel)
        elapsed = time.perf_counter() - start
        notes.append(f"(max rel err {worst:.1e}, {elapsed:.1f}s)")
        assert worst < 1e-6
        assert elapsed < 10


# ---------------------------------------------------------------- 2


def test_c02_hippo_and_discretization(acceptance):
    with criterion(acceptance, 2, "HiPPO oracle and bilinear residual") as notes:
        for d in (1, 3, 8, 16, 64):
            A = hippo_init(d)
            for n in range(d):
                for k in range(d):
                    if n > k:
                        ref = -np.sqrt((2 * n + 1) * (2 * k + 1))
                    elif n == k:
                        ref = -(n + 1)
                    else:
                        ref = 0.0
                    assert A[n, k] == pytest.approx(ref, abs=1e-12)
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(20):
            d = int(rng.integers(1, 17))
            A = torch.as_tensor(hippo_init(d)) + 0.1 * torch.as_tensor(rng.normal(size=(d, d)))
            step = float(rng.uniform(1e-3, 1.0))
            p = SSMParams(A, torch.ones(d, 1, dtype=f64), torch.ones(1, d, dtype=f64), step)
            ssm = discretize(p)
            eye = torch.eye(d, dtype=f64)
            res = ssm.A_bar @ (eye - step / 2 * A) - (eye + step / 2 * A)
            worst = max(worst, res.abs().max().item())
        notes.append(f"(max residual {worst:.1e})")
        assert worst < 1e-10


# ---------------------------------------------------------------- 3


def test_c03_gate_identities(acceptance):
    with criterion(acceptance, 3, "gated attention saturation and midpoint") as notes:
        torch.manual_seed(3)
        ga = GatedAttention(8, 2, TEMPORAL).double()
        x, U = torch.randn(2, 2, 8, 4, 6, dtype=f64).unbind(0)
        errs = []
        for bias, which in ((50.0, "self"), (-50.0, "cross"), (0.0, "mean")):
            with torch.no_grad():
                ga.W_g1.weight.zero_()
                ga.W_g2.weight.zero_()
                ga.b_g.fill_(bias)
            R, R_self, R_cross, _ = ga(x, U, return_parts=True)
            ref = {"self": R_self, "cross": R_cross, "mean": (R_self + R_cross) / 2}[which]
            errs.append((R - ref).abs().max().item())
        notes.append(f"(errors {', '.join(f'{e:.0e}' for e in errs)})")
        assert max(errs) < 1e-12


# ---------------------------------------------------------------- 4


def tiny_total_loss_setup(seed=0):
    torch.manual_seed(seed)
    cfg = ModelConfig(channels=8, mlp_hidden=8, d_state=4, layers=2, heads=2, emb_dim=8,
                      attn_width=8, num_steps=5)
    pts = np.array([0.0, 1.0, 2.5])
    adj = build_adjacency(np.abs(pts[:, None] - pts[None]), 0.0).adjacency
    model = AdaSTI(cfg, adj).double()
    g = torch.Generator().manual_seed(seed)
    X = torch.randn(2, 3, 8, generator=g, dtype=f64)
    M = (torch.rand(2, 3, 8, generator=g) > 0.25).to(f64)
    pair = [split_target_condition(m.numpy(), 0.3, seed + i) for i, m in enumerate(M)]
    M_ta = torch.as_tensor(np.stack([p.M_ta for p in pair]))
    M_co = torch.as_tensor(np.stack([p.M_co for p in pair]))
    sched = make_schedule(5)

    def loss():
        gen = torch.Generator().manual_seed(123)
        return total_loss(model, X, M_ta, M_co, sched, 1.0, gen)[0]

    return model, loss


def directional_fd(loss, p, v, h):
    orig = p.data.clone()
    with torch.no_grad():
        p.data = orig + h * v
        up = loss().item()
        p.data = orig - h * v
        down = loss().item()
        p.data = orig
    return (up - down) / (2 * h)


def test_c04_gradient_correctness(acceptance):
    # Per parameter group, compare g.v with a central difference along a unit
    # direction v that mixes the gradient direction with a random one. The
    # step is sized so the loss change dwarfs float64 roundoff, which matters
    # for groups whose gradients are ~1e-9 against a loss of order 1.
    with criterion(acceptance, 4, "total-loss gradients vs central differences") as notes:
        start = time.perf_counter()
        model, loss = tiny_total_loss_setup()
        names, params = zip(*model.named_parameters())
        base = loss()
        grads = torch.autograd.grad(base, params)
        gen = torch.Generator().manual_seed(0)
        worst, worst_name = 0.0, ""
        for name, p, g in zip(names, params, grads):
            r = torch.randn(p.shape, generator=gen, dtype=f64)
            r = r / r.norm()
            gn = g.norm()
            v = r if gn == 0 else g / gn + r
            v = v / v.norm()
            analytic = (g * v).sum().item()
            h = min(1e-2, max(1e-6, 1e-6 * abs(base.item()) / max(abs(analytic), 1e-300)))
            fd = directional_fd(loss, p, v, h)
            scale = max(abs(fd), abs(analytic))
            rel = 0.0 if scale < 1e-12 else abs(fd - analytic) / scale
            if rel > worst:
                worst, worst_name = rel, name
        elapsed = time.perf_counter() - start
        notes.append(f"({len(names)} groups, worst {worst:.1e} at {worst_name}, {elapsed:.0f}s)")
        assert worst < 1e-3
        assert elapsed < 300


# ---------------------------------------------------------------- 5


def test_c05_diffusion_algebra(acceptance):
    with criterion(acceptance, 5, "diffusion moments, inversion, schedule") as notes:
        s = make_schedule()
        n = 10_000
        g = torch.Generator().manual_seed(5)
        worst_z = 0.0
        for t in (1, 10, 25, 50):
            X0 = torch.full((n,), -0.8, dtype=f64)
            eps = torch.randn(n, generator=g, dtype=f64)
            x = q_sample(X0, torch.ones_like(X0), t, eps, s)
            ab = s.alpha_bar[t - 1]
            z_mean = abs(x.mean().item() - np.sqrt(ab) * -0.8) / np.sqrt((1 - ab) / n)
            z_var = abs(x.var().item() - (1 - ab)) / ((1 - ab) * np.sqrt(2 / (n - 1)))
            worst_z = max(worst_z, z_mean, z_var)
        assert worst_z < 3
        s1 = make_schedule(1, 1e-4, 0.2)
        X0 = torch.randn(6, 7, generator=g, dtype=f64)
        eps = torch.randn(6, 7, generator=g, dtype=f64)
        back = reverse_step(q_sample(X0, torch.ones_like(X0), 1, eps, s1), eps, 1, None, s1)
        inv = (back - X0).abs().max().item()
        assert inv < 1e-8
        assert np.all(np.diff(s.alpha_bar) < 0)
        assert np.all(s.beta_hat <= s.beta)
        notes.append(f"(max |z| {worst_z:.2f}, inversion err {inv:.0e})")


# ---------------------------------------------------------------- 6


def test_c06_mask_contracts(acceptance):
    with criterion(acceptance, 6, "random/block masks and target split") as notes:
        worst = 0.0
        for seed in range(10):
            for rate in (0.1, 0.25, 0.5, 0.75):
                m = generate_random_mask((100, 100), rate, seed)
                worst = max(worst, abs((1 - m.mean()) - rate))
        assert worst <= 0.02
        rng = np.random.default_rng(6)
        pts = rng.random((20, 2))
        graph = build_adjacency(np.linalg.norm(pts[:, None] - pts[None], axis=-1), 0.1)
        n_v, n_t = 3, 4
        m = generate_block_mask((20, 48), 0.01, n_v, n_t, graph, seed=1)
        missing = np.argwhere(m == 0)
        times = sorted(set(missing[:, 1]))
        nodes = sorted(set(missing[:, 0]))
        assert times == list(range(times[0], times[0] + n_t))
        assert any(sorted(block_nodes(graph.adjacency, s, n_v)) == nodes for s in nodes)
        for seed in range(50):
            M = (np.random.default_rng(seed).random((8, 24)) > 0.3).astype(float)
            p = split_target_condition(M, 0.1, seed)
            assert np.array_equal(p.M_ta + p.M_co, M)
            assert not np.any(p.M_ta * p.M_co)
        notes.append(f"(max rate deviation {100 * worst:.2f} pp)")


# ---------------------------------------------------------------- 7


def test_c07_observed_preservation(acceptance, tmp_path):
    with criterion(acceptance, 7, "observed entries preserved bit-exactly") as notes:
        checked = 0
        tiny = dict(synthetic_nodes=4, synthetic_windows=6, L=8, stride=8, channels=8,
                    mlp_hidden=8, d_state=4, layers=1, heads=2, emb_dim=8, attn_width=8,
                    num_steps=5, epochs=1, batch_size=4, k=2)
        for seed, extra in ((0, {}), (1, {"no_bis4pi": True}), (2, {"no_gated_attention": True})):
            cfg = ExperimentConfig(seed=seed, **tiny, **extra)
            exp = prepare_experiment(cfg)
            path = tmp_path / f"m{seed}.adasti"
            save_checkpoint(train(cfg, exp), path)
            ckpt = load_checkpoint(path)
            values = exp.table.values[:30] * 1.0001 + 1e-7  # values not seen in training
            rng = np.random.default_rng(seed)
            values[rng.random(values.shape) < 0.3] = np.nan
            table = RawSeriesTable(values, exp.table.node_ids, np.arange(30))
            out = impute_series(ckpt, table, k=2)
            obs = ~np.isnan(values)
            assert np.array_equal(out[obs], values[obs])
            assert np.isfinite(out).all()
            # the batch sampler restores observed entries on its own as well
            X = torch.randn(3, 4, 8, dtype=torch.float32)
            M = (torch.rand(3, 4, 8) > 0.4).float()
            res = impute(ckpt.build_model(), X, M, make_schedule(5), k=3, seed=seed)
            Mn = M.numpy() > 0
            assert np.array_equal(res.median[Mn], X.numpy()[Mn].astype(np.float64))
            checked += 1
        notes.append(f"({checked} checkpoints)")


# ---------------------------------------------------------------- 8 and 9


@pytest.fixture(scope="module")
def synthetic():
    cfg = load_config(SYNTHETIC_CFG)
    start = time.perf_counter()
    exp = prepare_experiment(cfg)
    ckpt = train(cfg, exp)
    report = evaluate_split(ckpt.build_model(), exp.test, cfg)
    elapsed = time.perf_counter() - start
    baselines = {w: evaluate_baseline(exp.test, cfg, w) for w in ("mean", "tli")}
    return cfg, exp, ckpt, report, baselines, elapsed


def test_c08_synthetic_end_to_end(acceptance, synthetic):
    with criterion(acceptance, 8, "synthetic ring benchmark") as notes:
        cfg, exp, _, report, base, elapsed = synthetic
        gain = 1 - report.mae / base["tli"].mae
        notes.append(
            f"(AdaSTI MAE {report.mae:.4f} RMSE {report.rmse:.4f}; "
            f"TLI {base['tli'].mae:.4f}/{base['tli'].rmse:.4f}; "
            f"mean {base['mean'].mae:.4f}/{base['mean'].rmse:.4f}; "
            f"gain over TLI {100 * gain:.1f}%; {elapsed / 60:.1f} min)"
        )
        assert report.mae < base["mean"].mae and report.rmse < base["mean"].rmse
        assert report.mae < base["tli"].mae and report.rmse < base["tli"].rmse
        assert gain >= 0.15
        assert elapsed < 45 * 60
        # seed determinism on a short run of the same configuration
        short = cfg.with_(epochs=2)
        sub = type(exp.test)(exp.test.observed[:8], exp.test.truth[:8])
        reps = [evaluate_split(train(short, exp).build_model(), sub, short) for _ in range(2)]
        assert reps[0].comparable() == reps[1].comparable()


def test_c09_ablation_ordering(acceptance, synthetic):
    with criterion(acceptance, 9, "ablation ordering") as notes:
        cfg, exp, _, full, _, _ = synthetic
        parts = [f"full {full.mae:.4f}"]
        for variant in ("no_bis4pi", "no_gated_attention"):
            rep, ckpt = run_ablation(cfg, variant, exp)
            parts.append(f"{variant} {rep.mae:.4f}")
            if variant == "no_gated_attention":
                assert not any("W_g1" in k or "b_g" in k for k in ckpt.model_state)
            else:
                assert not any(k.startswith("bis4pi.") for k in ckpt.model_state)
            if full.mae > rep.mae:
                within = full.mae <= rep.mae * 1.02
                parts.append(f"FLAG full worse than {variant}" + (" (within 2%)" if within else ""))
        notes.insert(0, "(" + ", ".join(p for p in parts if not p.startswith("FLAG")) + ")")
        notes.extend(p for p in parts if p.startswith("FLAG"))


# ---------------------------------------------------------------- 10


def test_c10_reproducibility_and_persistence(acceptance, tmp_path):
    with criterion(acceptance, 10, "reproducible reports and bitwise checkpoints") as notes:
        cfg = ExperimentConfig(
            synthetic_nodes=5, synthetic_windows=10, L=8, stride=8, channels=8, mlp_hidden=8,
            d_state=4, layers=1, heads=2, emb_dim=8, attn_width=8, num_steps=5, epochs=2,
            batch_size=4, k=3, seed=11,
        )
        reports = []
        for _ in range(2):
            exp = prepare_experiment(cfg)
            ckpt = train(cfg, exp)
            reports.append(evaluate(ckpt, exp))
        assert reports[0].comparable() == reports[1].comparable()

        path = tmp_path / "r.adasti"
        save_checkpoint(ckpt, path)
        loaded = load_checkpoint(path)
        a, b = ckpt.build_model(), loaded.build_model()
        X = torch.randn(2, 5, 8)
        M = (torch.rand(2, 5, 8) > 0.3).float()
        with torch.no_grad():
            pa, pb = a.pre_impute(X, M), b.pre_impute(X, M)
            Ua, Ub = a.condition(pa.X_c).U, b.condition(pb.X_c).U
            t = torch.tensor([2, 4])
            ea = a.denoise(X * (1 - M), t, pa.X_c, 1 - M, M, Ua)
            eb = b.denoise(X * (1 - M), t, pb.X_c, 1 - M, M, Ub)
        assert torch.equal(pa.X_c, pb.X_c) and torch.equal(Ua, Ub) and torch.equal(ea, eb)
        ra = impute(a, X, M, make_schedule(5), k=2, seed=1)
        rb = impute(b, X, M, make_schedule(5), k=2, seed=1)
        assert np.array_equal(ra.samples, rb.samples)
        assert evaluate(loaded, exp).comparable() == reports[1].comparable()
        notes.append(f"(MAE {reports[0].mae:.4f} twice)")
