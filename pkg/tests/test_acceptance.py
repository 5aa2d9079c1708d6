"""Acceptance criteria, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line with the measured
value and the pinned tolerance, then asserts.
"""

import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from deep_galaxy.checkpoint import decode_checkpoint, encode_checkpoint
from deep_galaxy.data import Dataset, SplitSpec, generate_dataset, stratified_split
from deep_galaxy.errors import CheckpointFormatError, CheckpointVersionError
from deep_galaxy.layers import (
    ConvParams,
    DenseParams,
    conv_backward,
    conv_forward,
    dense_backward,
    dense_forward,
    maxpool_backward,
    maxpool_forward,
    relu_backward,
    relu_forward,
    softmax_cross_entropy,
)
from deep_galaxy.metrics import median
from deep_galaxy.network import (
    PROFILES,
    NetworkConfig,
    TrainConfig,
    build_network,
    evaluate,
    forward,
    loss_and_grads,
    run_protocol,
    train,
)

from conftest import naive_conv, numeric_grad, rel_err

# pinned tolerances
LAYER_FD_TOL = 1e-5
E2E_FD_TOL = 1e-4
CONV_ORACLE_TOL = 1e-10
OVERFIT_LOSS = 0.01
OVERFIT_ITERATIONS = 500
PROTOCOL_MIN_ACC = 0.90
LINEAR_MAX_ACC = 0.90
NORM_TOL = 1e-9
N_SEEDS = 20

# criterion 5 budget: the default 30 epochs would take ~16 min on one core
PROTOCOL_EPOCHS = 15


def _line(capsys, number, title, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}: {detail}")


def test_c01_split_reproduction(capsys):
    counts = (617, 513, 216)
    labels = np.repeat([0, 1, 2], counts)
    ids = [f"s{i:04d}" for i in range(len(labels))]
    ds = Dataset(ids, np.zeros((len(ids), 1, 1, 1)), labels)
    train_set, val_set, test_set = stratified_split(ds, SplitSpec(seed=0))
    got = [tuple(s.class_counts()[c] for s in (train_set, val_set, test_set)) for c in range(3)]
    want = [(370, 117, 130), (308, 97, 108), (130, 41, 45)]
    ok = got == want
    _line(capsys, 1, "stratified split per-class counts", ok, f"{got} (expected {want}, exact)")
    assert ok


def _layer_errors(seed):
    """Max FD relative error for each layer kind at one seed."""
    r = np.random.default_rng(seed)
    errs = {}

    x = r.standard_normal((2, 2, 6, 6))
    p = ConvParams(r.standard_normal((3, 2, 3, 3)), r.standard_normal(3), int(r.integers(1, 3)), int(r.integers(0, 2)))
    y, cache = conv_forward(x, p)
    dy = r.standard_normal(y.shape)
    dx, dw, db = conv_backward(dy, cache, p)
    f = lambda: float(np.sum(conv_forward(x, p)[0] * dy))
    errs["conv"] = max(rel_err(dx, numeric_grad(f, x)).max(), rel_err(dw, numeric_grad(f, p.weights)).max(),
                       rel_err(db, numeric_grad(f, p.bias)).max())

    x = r.standard_normal((3, 8))
    x[np.abs(x) <= 1e-3] = 0.5
    dy = r.standard_normal(x.shape)
    _, cache = relu_forward(x)
    errs["relu"] = rel_err(relu_backward(dy, cache),
                           numeric_grad(lambda: float(np.sum(relu_forward(x)[0] * dy)), x)).max()

    x = r.standard_normal((2, 2, 4, 4))
    dy = r.standard_normal((2, 2, 2, 2))
    _, cache = maxpool_forward(x)
    errs["maxpool"] = rel_err(maxpool_backward(dy, cache),
                              numeric_grad(lambda: float(np.sum(maxpool_forward(x)[0] * dy)), x)).max()

    x = r.standard_normal((3, 5))
    p = DenseParams(r.standard_normal((4, 5)), r.standard_normal(4))
    dy = r.standard_normal((3, 4))
    _, cache = dense_forward(x, p)
    dx, dw, db = dense_backward(dy, cache, p)
    f = lambda: float(np.sum(dense_forward(x, p)[0] * dy))
    errs["dense"] = max(rel_err(dx, numeric_grad(f, x)).max(), rel_err(dw, numeric_grad(f, p.weights)).max(),
                        rel_err(db, numeric_grad(f, p.bias)).max())

    z = r.standard_normal((4, 3))
    labels = r.integers(0, 3, 4)
    _, _, d = softmax_cross_entropy(z, labels)
    errs["softmax_ce"] = rel_err(d, numeric_grad(lambda: softmax_cross_entropy(z, labels)[0], z)).max()
    return errs


def _e2e_error(seed):
    cfg = NetworkConfig(16, 16, 3, 2, 5, 1, 0, 6, 3)
    net = build_network(cfg, seed)
    r = np.random.default_rng(1000 + seed)
    x = r.uniform(-0.5, 0.5, (4, 3, 16, 16))
    y = r.integers(0, 3, 4)
    _, _, grads = loss_and_grads(net, x, y)
    worst = 0.0
    for name, w in net.parameters().items():
        num = numeric_grad(lambda: loss_and_grads(net, x, y)[0], w)
        worst = max(worst, float(rel_err(grads[name], num).max()))
    return worst


def test_c02_gradient_suite(capsys):
    t0 = time.perf_counter()
    per_layer = {}
    for seed in range(N_SEEDS):
        for k, v in _layer_errors(seed).items():
            per_layer[k] = max(per_layer.get(k, 0.0), v)
    e2e = max(_e2e_error(seed) for seed in range(N_SEEDS))
    elapsed = time.perf_counter() - t0
    ok = max(per_layer.values()) < LAYER_FD_TOL and e2e < E2E_FD_TOL
    detail = ", ".join(f"{k} {v:.1e}" for k, v in per_layer.items())
    _line(capsys, 2, "finite-difference gradients", ok,
          f"{detail} (< {LAYER_FD_TOL:g}); end-to-end {e2e:.1e} (< {E2E_FD_TOL:g}); "
          f"{N_SEEDS} seeds, {elapsed:.1f}s")
    assert ok


def test_c03_conv_oracle(capsys):
    r = np.random.default_rng(3)
    worst, cases = 0.0, 0
    while cases < 60:
        n, c, f = int(r.integers(1, 4)), int(r.integers(1, 5)), int(r.integers(1, 5))
        h, w = int(r.integers(1, 13)), int(r.integers(1, 13))
        k, p, s = int(r.choice([1, 3, 5])), int(r.choice([0, 1, 2])), int(r.choice([1, 2]))
        if h + 2 * p < k or w + 2 * p < k:
            continue
        x = r.standard_normal((n, c, h, w))
        wt = r.standard_normal((f, c, k, k))
        b = r.standard_normal(f)
        y, _ = conv_forward(x, ConvParams(wt, b, s, p))
        worst = max(worst, float(np.max(np.abs(y - naive_conv(x, wt, b, s, p)))))
        cases += 1
    ok = worst <= CONV_ORACLE_TOL
    _line(capsys, 3, "im2col conv vs naive loops", ok, f"max abs diff {worst:.1e} over {cases} shapes (<= 1e-10)")
    assert ok


def test_c04_overfit(capsys):
    ds = generate_dataset((4, 4, 4), 32, 32, 0)
    net = build_network(PROFILES["fast32"], 0)
    tc = TrainConfig()
    n_batches = -(-len(ds) // min(tc.batch_size, len(ds)))
    tc = TrainConfig(epochs=OVERFIT_ITERATIONS // n_batches)
    records = []
    t0 = time.perf_counter()
    train(net, ds, None, tc, on_record=records.append)
    elapsed = time.perf_counter() - t0
    acc = evaluate(net, ds).accuracy
    loss = loss_and_grads(net, ds.images, ds.labels)[0]
    ok = acc == 1.0 and loss < OVERFIT_LOSS and len(records) <= OVERFIT_ITERATIONS
    _line(capsys, 4, "overfit 12 samples, fast32, default TrainConfig", ok,
          f"train acc {acc:.4f} (== 1), loss {loss:.4g} (< {OVERFIT_LOSS}) after {len(records)} iterations "
          f"(<= {OVERFIT_ITERATIONS}), {elapsed:.0f}s")
    assert ok


@pytest.fixture(scope="module")
def desk_scale():
    ds = generate_dataset((617, 513, 216), 32, 32, 0)
    return stratified_split(ds, SplitSpec(seed=0))


def test_c05_protocol_analogue(desk_scale, capsys):
    train_set, val_set, test_set = desk_scale
    assert (len(train_set), len(val_set), len(test_set)) == (808, 255, 283)
    t0 = time.perf_counter()
    result = run_protocol(desk_scale, PROFILES["fast32"], TrainConfig(epochs=PROTOCOL_EPOCHS, seed=0), n_runs=5)
    elapsed = time.perf_counter() - t0
    runs = ", ".join(f"{a:.4f}" for a in result.per_run)
    ok = result.median_accuracy >= PROTOCOL_MIN_ACC
    _line(capsys, 5, "median-of-5 on synthetic 1346-image set", ok,
          f"median test acc {result.median_accuracy:.4f} (>= {PROTOCOL_MIN_ACC}); runs [{runs}]; "
          f"{PROTOCOL_EPOCHS} epochs; {elapsed:.0f}s")
    assert ok


def test_c05_linear_baseline(desk_scale, capsys):
    from sklearn.linear_model import LogisticRegression

    train_set, val_set, test_set = desk_scale
    flat = lambda d: d.images.reshape(len(d), -1)
    best = None
    for c in (0.01, 0.1, 1.0, 10.0):
        clf = LogisticRegression(C=c, max_iter=2000).fit(flat(train_set), train_set.labels)
        val_acc = clf.score(flat(val_set), val_set.labels)
        if best is None or val_acc > best[0]:
            best = (val_acc, c, clf)
    test_acc = best[2].score(flat(test_set), test_set.labels)
    ok = test_acc < LINEAR_MAX_ACC
    _line(capsys, 5, "pixel-space linear baseline", ok,
          f"logistic regression (C={best[1]} by val) test acc {test_acc:.4f} (< {LINEAR_MAX_ACC})")
    assert ok


def _cli_train(tmp_path, tag, threads):
    env = dict(os.environ, DEEP_GALAXY_THREADS=str(threads), NUMBA_NUM_THREADS="2")
    out = tmp_path / f"{tag}.dgn"
    cmd = [sys.executable, "-m", "deep_galaxy.cli", "train", "--config", str(tmp_path / "cfg.json"),
           "--data", str(tmp_path / "data"), "--manifest", str(tmp_path / "m.csv"), "--out", str(out)]
    subprocess.run(cmd, check=True, env=env, capture_output=True)
    return {suffix: (tmp_path / f"{tag}{suffix}").read_bytes()
            for suffix in (".dgn", "_curve.csv", "_curve_val.csv", "_eval.csv")}


def test_c06_determinism(tmp_path, capsys):
    from deep_galaxy.cli import main

    main(["generate", "--out", str(tmp_path / "data"), "--counts", "8,8,8", "--size", "32", "--seed", "6"])
    main(["split", "--data", str(tmp_path / "data"), "--seed", "6", "--out", str(tmp_path / "m.csv")])
    (tmp_path / "cfg.json").write_text(json.dumps(
        {"profile": "fast32", "learning_rate": 0.01, "momentum": 0.9, "batch_size": 5, "epochs": 3, "seed": 6}))
    capsys.readouterr()
    a = _cli_train(tmp_path, "one", 1)
    b = _cli_train(tmp_path, "two", 2)
    same = {k: a[k] == b[k] for k in a}
    ok = all(same.values())
    _line(capsys, 6, "byte-identical cmd_train outputs at 1 vs 2 threads", ok,
          ", ".join(f"{k} {'identical' if v else 'DIFFERENT'}" for k, v in same.items()))
    assert ok


def test_c07_normalization(capsys):
    r = np.random.default_rng(7)
    worst_p = worst_d = 0.0
    for _ in range(10_000):
        n = int(r.integers(1, 17))
        z = r.standard_normal((n, 3)) * r.choice([0.1, 1.0, 10.0, 100.0])
        _, probs, d = softmax_cross_entropy(z, r.integers(0, 3, n))
        worst_p = max(worst_p, float(np.max(np.abs(probs.sum(axis=1) - 1))))
        worst_d = max(worst_d, float(np.max(np.abs(d.sum(axis=1)))))
    ok = worst_p <= NORM_TOL and worst_d <= NORM_TOL
    _line(capsys, 7, "softmax / dlogits row sums", ok,
          f"max |sum p - 1| {worst_p:.1e}, max |sum dlogits| {worst_d:.1e} over 10^4 batches (<= 1e-9)")
    assert ok


def test_c08_checkpoint_round_trip(capsys):
    net = build_network(PROFILES["fast32"], 8)
    x = np.random.default_rng(8).uniform(-0.5, 0.5, (6, 3, 32, 32))
    buf = encode_checkpoint(net)
    back, _ = decode_checkpoint(buf)
    identical = np.array_equal(forward(back, x), forward(net, x))
    rejected = []
    for bad, err in ((b"XXXX" + buf[4:], CheckpointVersionError), (buf[:len(buf) // 3], CheckpointFormatError)):
        try:
            decode_checkpoint(bad)
        except err:
            rejected.append(True)
        else:
            rejected.append(False)
    ok = identical and all(rejected)
    _line(capsys, 8, "checkpoint round trip", ok,
          f"probs bit-identical: {identical}; bad magic rejected: {rejected[0]}; truncation rejected: {rejected[1]}")
    assert ok


def test_c09_architecture(capsys):
    layers = build_network(PROFILES["default64"], 0).layers()
    got = [(layer.kind, layer.size) for layer in layers]
    want = [("input", (3, 64, 64)), ("conv", 96), ("relu", None), ("maxpool", 2),
            ("dense", 24), ("relu", None), ("dense", 3), ("softmax", 3)]
    ok = got == want
    _line(capsys, 9, "8-layer architecture", ok, " -> ".join(f"{k}[{s}]" if s else k for k, s in got))
    assert ok


def test_c10_median(capsys):
    m = median([0.91, 0.95, 0.93, 0.97, 0.92])
    ok = m == 0.93
    _line(capsys, 10, "median of five runs", ok, f"median = {m!r} (exactly 0.93)")
    assert ok
