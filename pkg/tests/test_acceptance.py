"""The nine acceptance criteria, each at its stated tolerance and time budget.

Each test records one PASS/FAIL line, printed in the pytest terminal summary.
"""

import time

import numpy as np

from cosettle.cli import main
from cosettle.data import SyntheticModelSpec, generate_corpus, read_corpus, write_corpus
from cosettle.errors import FormatError
from cosettle.gradcheck import run_gradcheck
from cosettle.metrics import margin
from cosettle.pea import ProbeConfig, shortcut_probe
from cosettle.projection import init_projection, load_checkpoint, param_arrays, save_checkpoint
from cosettle.theory import (
    delta_margin_closed_form,
    delta_margin_empirical,
    lemma1_gradient_terms,
    optimal_eigs_closed_form,
    optimize_surrogate_linear,
    random_orthogonal,
    spectral_corpus_spec,
)
from cosettle.trainer import TrainConfig, train

# (method, D_inter, D_intra, printed D) for every row of the distance-metric table
REFERENCE_ROWS = [
    ("SiamMAE", 0.5067, 0.1330, 0.4668),
    ("CropMAE", 0.5216, 0.1736, 0.4695),
    ("RSP", 0.4662, 0.2130, 0.4023),
    ("MAE", 0.3122, 0.1131, 0.2783),
    ("MAE +Ours", 0.5073, 0.1834, 0.4523),
    ("I-JEPA", 0.2572, 0.1425, 0.2145),
    ("I-JEPA +Ours", 0.5904, 0.1745, 0.5380),
    ("CLIP", 0.5603, 0.2186, 0.4947),
    ("CLIP +Ours", 0.6162, 0.2626, 0.5374),
    ("BLIP", 0.5858, 0.1598, 0.5378),
    ("BLIP +Ours", 0.6102, 0.2457, 0.5365),
    ("MoCo v3", 0.5547, 0.2164, 0.4898),
    ("MoCo v3 +Ours", 0.5503, 0.1909, 0.4930),
    ("iBOT", 0.6143, 0.1862, 0.5584),
    ("iBOT +Ours", 0.6399, 0.2092, 0.5772),
    ("DINO", 0.5756, 0.2144, 0.5112),
    ("DINO +Ours", 0.6246, 0.2316, 0.5551),
    ("DINO v2", 0.5926, 0.1808, 0.5384),
    ("DINO v2 +Ours", 0.6373, 0.1976, 0.5780),
]


def test_criterion_1_gradient_suite(acceptance):
    t0 = time.perf_counter()
    report = run_gradcheck(instances=100, seed=0, step=1e-5, tol=1e-6)
    elapsed = time.perf_counter() - t0
    ok = report.passed and len(report.results) == 600 and elapsed <= 60
    acceptance(1, ok, f"{len(report.results)} checks, max rel error {report.max_error:.2e}, {elapsed:.1f}s")
    assert ok


def test_criterion_2_soft_threshold_recovery(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    lams = (0.5, 1.0, 2.0)
    err_eig = err_full = 0.0
    for i in range(20):
        lam = lams[i % 3]
        sigma = rng.uniform(0.0, 3.0 * lam, 16)
        target = optimal_eigs_closed_form(sigma, lam)
        err_eig = max(err_eig, np.max(np.abs(optimize_surrogate_linear(sigma, lam).mu_hat - target)))
        fit = optimize_surrogate_linear(sigma, lam, "full", basis=random_orthogonal(16, rng), seed=i)
        err_full = max(err_full, np.max(np.abs(fit.mu_hat - target)))
    elapsed = time.perf_counter() - t0
    ok = err_eig <= 1e-3 and err_full <= 1e-2 and elapsed <= 30
    acceptance(2, ok, f"eigenbasis {err_eig:.1e}, full {err_full:.1e}, {elapsed:.1f}s")
    assert ok


def test_criterion_3_margin_change_oracle(acceptance):
    t0 = time.perf_counter()
    closed = delta_margin_closed_form([1.0, 3.0], 0.75)
    emp = delta_margin_empirical(spectral_corpus_spec([1.0, 3.0]), 0.75, samples=100_000, seed=0)
    rel = abs(emp - closed.delta) / closed.delta
    # sign sweep: tau_bar = 2, so the condition is lam < 1
    sigma = np.array([0.1, 1.0, 2.4, 4.5])
    sweep_ok = True
    for lam in np.linspace(0.2, 2.0, 10):
        rep = delta_margin_closed_form(sigma, lam)
        truth = lam < rep.tau_bar / 2.0
        sweep_ok &= rep.positivity_condition == truth
        if truth:
            emp_lam = delta_margin_empirical(spectral_corpus_spec(sigma), lam, samples=100_000, seed=1)
            sweep_ok &= rep.delta > 0 and emp_lam > 0
    elapsed = time.perf_counter() - t0
    ok = abs(closed.delta - 1 / 3) <= 1e-12 and rel <= 0.05 and sweep_ok and elapsed <= 30
    acceptance(3, ok, f"closed {closed.delta:.6f}, Monte Carlo {emp:.4f} (rel {rel:.2%}), "
                      f"sweep {'ok' if sweep_ok else 'wrong'}, {elapsed:.1f}s")
    assert ok


def test_criterion_4_table_margins(acceptance):
    errs = {name: abs(margin(inter, intra, 0.3) - d) for name, inter, intra, d in REFERENCE_ROWS}
    worst = max(errs, key=errs.get)
    ok = all(e <= 5e-4 for e in errs.values())
    acceptance(4, ok, f"{len(errs)} rows, worst {worst} off by {errs[worst]:.1e}")
    assert ok


def test_criterion_5_shortcut_probe(acceptance):
    t0 = time.perf_counter()
    plain = shortcut_probe("shuffled", ProbeConfig(alpha=0.0, steps=500))
    pea = shortcut_probe("shuffled", ProbeConfig(alpha=0.25, steps=500))
    elapsed = time.perf_counter() - t0
    hit = next((i for i, a in enumerate(plain.identity_accuracy) if a >= 0.99), None)
    peak = max(pea.identity_accuracy)
    ok = hit is not None and peak < 0.5 and elapsed <= 120
    acceptance(5, ok, f"alpha=0 reaches 0.99 at step {hit}, alpha=0.25 peak {peak:.3f}, {elapsed:.1f}s")
    assert ok


def test_criterion_6_end_to_end_direction(acceptance):
    t0 = time.perf_counter()
    # temporal noise is isotropic; videos differ only in 16 of 64 directions
    inter = np.diag([4.0] * 16 + [0.1] * 48)
    spec = SyntheticModelSpec(dim=64, n_h=7, n_w=7, frames_per_video=8, videos=200,
                              intra_cov=4.0, inter_cov=inter, seed=0)
    corpus = generate_corpus(spec)
    cfg = TrainConfig(epochs=5, lam=1.0, alpha=0.25, base_lr=0.1, batch_size=4, seed=0)
    _, history = train(corpus, cfg)
    elapsed = time.perf_counter() - t0
    first, last = history.epochs[0], history.epochs[-1]
    ok = last["margin"] > first["margin"] and last["cyc_acc"] > first["cyc_acc"] and elapsed <= 600
    acceptance(6, ok, f"margin {first['margin']:.4f} -> {last['margin']:.4f}, "
                      f"cyc acc {first['cyc_acc']:.4f} -> {last['cyc_acc']:.4f}, {elapsed:.1f}s")
    assert ok


def test_criterion_7_gradient_signs(acceptance):
    mu, sigma, lam = np.meshgrid(np.linspace(0.01, 0.99, 10), np.linspace(0.01, 10.0, 10),
                                 np.linspace(0.01, 10.0, 10), indexing="ij")
    cons, sep = lemma1_gradient_terms(mu.ravel(), sigma.ravel(), lam.ravel())
    ok = cons.size == 1000 and np.all(cons > 0) and np.all(sep < 0)
    acceptance(7, ok, f"{cons.size} points, min consistency {cons.min():.2e}, max separability {sep.max():.2e}")
    assert ok


def _cli_run(root):
    root.mkdir()
    corpus, ckpt, metrics = root / "c.bin", root / "w.bin", root / "m.json"
    codes = [
        main(["gen", "--dim", "16", "--n-h", "4", "--n-w", "4", "--frames-per-video", "6", "--videos", "24",
              "--seed", "11", "--out", str(corpus)]),
        main(["train", "--corpus", str(corpus), "--epochs", "2", "--batch-size", "4", "--base-lr", "0.05",
              "--seed", "11", "--threads", "1", "--out", str(ckpt)]),
        main(["eval", "--corpus", str(corpus), "--checkpoint", str(ckpt), "--out", str(metrics)]),
    ]
    return codes, [p.read_bytes() for p in (corpus, ckpt, metrics, root / "w.bin.history.jsonl")]


def test_criterion_8_determinism(tmp_path, acceptance):
    codes_a, files_a = _cli_run(tmp_path / "a")
    codes_b, files_b = _cli_run(tmp_path / "b")
    same = [x == y for x, y in zip(files_a, files_b)]
    ok = codes_a == codes_b == [0, 0, 0] and all(same)
    acceptance(8, ok, f"exit codes {codes_a}, identical corpus/checkpoint/metrics/history {same}")
    assert ok


def _expect_format_error(reader, path, offset=None):
    try:
        reader(path)
    except FormatError as exc:
        return offset is None or exc.offset == offset
    return False


def test_criterion_9_format_round_trips(tmp_path, acceptance):
    corpus = generate_corpus(SyntheticModelSpec(dim=8, n_h=3, n_w=3, frames_per_video=4, videos=5,
                                                intra_cov=1.0, inter_cov=2.0, seed=3))
    cpath = tmp_path / "c.bin"
    write_corpus(cpath, corpus)
    back = read_corpus(cpath)
    corpus_ok = all(np.array_equal(a.frames, b.frames) and a.video_id == b.video_id for a, b in zip(corpus, back))

    ckpt_ok = True
    for variant in ("linear", "mlp"):
        params = init_projection(variant, 8, np.random.default_rng(4))
        wpath = tmp_path / f"{variant}.bin"
        save_checkpoint(wpath, params)
        loaded = load_checkpoint(wpath)
        ckpt_ok &= all(np.array_equal(v, getattr(loaded, k)) for k, v in param_arrays(params).items())

    errors_ok = True
    bad = tmp_path / "bad.bin"
    for reader, path in ((read_corpus, cpath), (load_checkpoint, tmp_path / "mlp.bin")):
        raw = path.read_bytes()
        bad.write_bytes(b"\0\0\0\0" + raw[4:])
        errors_ok &= _expect_format_error(reader, bad, offset=0)
        for cut in (2, 10, len(raw) - 1):
            bad.write_bytes(raw[:cut])
            errors_ok &= _expect_format_error(reader, bad)
    ok = corpus_ok and ckpt_ok and errors_ok
    acceptance(9, ok, f"corpus round trip {corpus_ok}, checkpoint round trip {ckpt_ok}, format errors {errors_ok}")
    assert ok
