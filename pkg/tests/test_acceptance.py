"""Acceptance suite: one test per criterion, each reporting PASS or FAIL.

Run on its own with ``pytest tests/test_acceptance.py -s`` to see the
verdict lines as they happen; a summary also prints at the end of any run.
"""

import time

import numpy as np

from dfunet import checkpoint, netzoo
from dfunet import layers as L
from dfunet import metrics as M
from dfunet.layers import ConvSpec, LrnParams, ParallelConvSpec, PoolSpec
from dfunet.optim import AdamState, TrainConfig, adam_step, train
from dfunet.pipeline.augment import PatchRecord, augment_patch, augmented_count
from dfunet.pipeline.image import ImageBuffer
from dfunet.pipeline.normalize import apply_normalizer, fit_normalizer
from dfunet.svm import KernelSpec, alphas_from_model, smo_train, svm_predict
from oracles import (bias_from_alpha, direct_mcc, direct_rates, dual_value, linear_kernel, numeric_grad,
                     pairwise_auc, qp_projected_gradient, rbf_kernel, rel_error)

# Input / output extents of the twelve spatial rows of the base architecture table
ARCH_TABLE_ROWS = {
    1: ((3, 224, 224), (64, 112, 112)),
    2: ((64, 112, 112), (64, 56, 56)),
    3: ((64, 56, 56), (64, 56, 56)),
    4: ((64, 56, 56), (192, 56, 56)),
    5: ((192, 56, 56), (192, 28, 28)),
    6: ((192, 28, 28), (224, 28, 28)),
    7: ((224, 28, 28), (224, 14, 14)),
    8: ((224, 14, 14), (224, 14, 14)),
    9: ((224, 14, 14), (224, 14, 14)),
    10: ((224, 14, 14), (224, 7, 7)),
    11: ((224, 7, 7), (224, 7, 7)),
    12: ((224, 7, 7), (224, 1, 1)),
}

# Reference AUC rows: (model, auc, standard error, printed 95% interval)
REFERENCE_AUC_ROWS = [
    ("LBP", 0.9322, 0.0061, (0.9202, 0.9443)),
    ("LBP + HOG", 0.9308, 0.0060, (0.9190, 0.9427)),
    ("LBP + HOG + Colour", 0.9430, 0.0054, (0.9324, 0.9537)),
    ("LeNet", 0.9292, 0.0060, (0.9173, 0.9412)),
    ("AlexNet", 0.9504, 0.0050, (0.9405, 0.9603)),
    ("GoogLeNet", 0.9604, 0.0045, (0.9514, 0.9690)),
    ("DFUNet", 0.9608, 0.0044, (0.9520, 0.9695)),
]


# -- 1 ------------------------------------------------------------------------

def executed_stage_shapes(spec, x):
    """Per-stage (input, output) extents observed while actually running ``x``."""
    logits, cache = netzoo.forward(spec, netzoo.init_params(spec, 0), x)
    inputs = []
    for aux in cache:
        first = aux[0] if isinstance(aux, tuple) else aux
        inputs.append(tuple(first[1:]) if isinstance(first, tuple) else first.shape[1:])
    outputs = inputs[1:] + [logits.shape[1:]]
    stages = {}
    for layer, inp, out in zip(spec.layers, inputs, outputs):
        stages.setdefault(layer.stage, [inp, out])[1] = out
    return {k: (tuple(v[0]), tuple(v[1])) for k, v in stages.items()}


def test_architecture_table_shapes(verdict):
    start = time.perf_counter()
    spec = netzoo.build_dfunet("base", (3, 224, 224), 2)
    x = np.random.default_rng(0).normal(size=(2, 3, 224, 224))
    stages = executed_stage_shapes(spec, x)
    wide = netzoo.build_dfunet("base", (3, 224, 224), 2, fc_units=1000).stage_shapes()
    elapsed = time.perf_counter() - start
    bad = [k for k, row in ARCH_TABLE_ROWS.items() if stages[k] != row]
    ok = (not bad and stages[13][1] == (100,) and stages[14][1] == (2,)
          and wide[13][1] == (1000,) and elapsed < 30)
    verdict("architecture table shapes", ok, f"mismatched rows {bad}, {elapsed:.1f}s")


# -- 2 ------------------------------------------------------------------------

class ProbeStats:
    def __init__(self, rng):
        self.rng = rng
        self.count = 0
        self.worst = 0.0

    def probe(self, loss, analytic, arr, n):
        for _ in range(n):
            idx = tuple(int(self.rng.integers(0, s)) for s in arr.shape)
            err = rel_error(numeric_grad(loss, arr, idx, h=1e-6), analytic[idx])
            self.worst = max(self.worst, err)
            self.count += 1


def layer_gradient_probes(stats):
    rng = stats.rng
    # convolution with stride and padding
    conv = ConvSpec(3, 4, 3, 2, 1)
    x = rng.normal(size=(2, 3, 7, 7))
    w = rng.normal(size=conv.weight_shape)
    b = rng.normal(size=4)
    r = rng.normal(size=L.conv2d_forward(x, conv, w, b).shape)
    gx, gw, gb = L.conv2d_backward(x, conv, w, r)
    loss = lambda: float((L.conv2d_forward(x, conv, w, b) * r).sum())  # noqa: E731
    stats.probe(loss, gx, x, 6)
    stats.probe(loss, gw, w, 6)
    stats.probe(loss, gb, b, 2)
    # max and average pooling with ceil rounding
    for mode in ("max", "average"):
        spec = PoolSpec(mode, 3, 2)
        x = rng.normal(size=(2, 2, 6, 6))
        y, idx = L.pool_forward(x, spec)
        r = rng.normal(size=y.shape)
        g = L.pool_backward(x, spec, idx, r)
        stats.probe(lambda: float((L.pool_forward(x, spec)[0] * r).sum()), g, x, 6)
        y, idx = L.global_pool_forward(x, mode)
        r = rng.normal(size=y.shape)
        g = L.global_pool_backward(x, mode, idx, r)
        stats.probe(lambda: float((L.global_pool_forward(x, mode)[0] * r).sum()), g, x, 6)
    # relu, away from the kink
    x = rng.normal(size=(3, 5))
    x[np.abs(x) < 1e-3] = 0.5
    r = rng.normal(size=x.shape)
    stats.probe(lambda: float((L.relu(x) * r).sum()), L.relu_backward(x, r), x, 6)
    # local response normalisation
    p = LrnParams(n=3, k=1.5, alpha=0.3, beta=0.75)
    x = rng.normal(size=(2, 5, 2, 2)) * 2
    r = rng.normal(size=x.shape)
    stats.probe(lambda: float((L.lrn_forward(x, p) * r).sum()), L.lrn_backward(x, p, r), x, 8)
    # channel concatenation
    parts = [rng.normal(size=(1, c, 2, 2)) for c in (1, 2, 3)]
    r = rng.normal(size=(1, 6, 2, 2))
    grads = L.concat_channels_backward(r, [1, 2, 3])
    for part, g in zip(parts, grads):
        stats.probe(lambda: float((L.concat_channels(parts) * r).sum()), g, part, 2)
    # parallel 1x1 / 3x3 / 5x5 block
    spec = ParallelConvSpec(2, (2, 2, 1))
    x = rng.normal(size=(1, 2, 5, 5))
    ws = [rng.normal(size=br.weight_shape) * 0.5 for br in spec.branches()]
    bs = [rng.normal(size=br.out_channels) * 0.1 for br in spec.branches()]
    y, cache = L.parallel_conv_forward(x, spec, ws, bs)
    r = rng.normal(size=y.shape)
    gx, gws, gbs = L.parallel_conv_backward(x, spec, ws, cache, r)
    loss = lambda: float((L.parallel_conv_forward(x, spec, ws, bs)[0] * r).sum())  # noqa: E731
    stats.probe(loss, gx, x, 6)
    for wi, gwi in zip(ws, gws):
        stats.probe(loss, gwi, wi, 2)
    # fully connected
    x = rng.normal(size=(3, 4))
    w = rng.normal(size=(5, 4))
    b = rng.normal(size=5)
    r = rng.normal(size=(3, 5))
    gx, gw, gb = L.fully_connected_backward(x, w, r)
    loss = lambda: float((L.fully_connected(x, w, b) * r).sum())  # noqa: E731
    stats.probe(loss, gx, x, 4)
    stats.probe(loss, gw, w, 4)
    stats.probe(loss, gb, b, 2)
    # softmax cross-entropy
    z = rng.normal(size=(4, 3))
    labels = np.array([0, 2, 1, 2])
    _, _, g = L.softmax_cross_entropy(z, labels)
    stats.probe(lambda: L.softmax_cross_entropy(z, labels)[1], g, z, 6)


def network_gradient_probes(stats, probes=60):
    rng = stats.rng
    spec = netzoo.build_dfunet("base", (3, 32, 32))
    params = netzoo.init_params(spec, 1)
    x = rng.normal(size=(2, 3, 32, 32))
    labels = np.array([0, 1])
    _, _, grads = netzoo.loss_and_gradients(spec, params, x, labels)
    names = sorted(params)
    loss = lambda: netzoo.loss_and_gradients(spec, params, x, labels)[0]  # noqa: E731
    for _ in range(probes):
        name = names[int(rng.integers(0, len(names)))]
        stats.probe(loss, grads[name], params[name], 1)


def test_gradient_correctness(verdict):
    start = time.perf_counter()
    stats = ProbeStats(np.random.default_rng(2024))
    layer_gradient_probes(stats)
    network_gradient_probes(stats)
    elapsed = time.perf_counter() - start
    ok = stats.count >= 100 and stats.worst < 1e-4 and elapsed < 300
    verdict("gradient correctness", ok,
            f"{stats.count} probes, max relative error {stats.worst:.2e}, {elapsed:.1f}s")


# -- 3 ------------------------------------------------------------------------

def smooth_field(rng, size, waves=4):
    """Low-frequency random texture: a sum of a few long-wavelength sinusoids."""
    yy, xx = np.mgrid[:size, :size] / size
    field = np.zeros((size, size))
    for _ in range(waves):
        fy, fx = rng.uniform(0.3, 1.5, 2)
        field += np.sin(2 * np.pi * (fy * yy + fx * xx) + rng.uniform(0, 2 * np.pi))
    return field / waves


def synthetic_ulcer_patches(n=100, size=64, seed=0):
    """Class 0: skin-tone patches with smooth noise. Class 1: the same
    background with a red, finely textured blob at a random place."""
    rng = np.random.default_rng(seed)
    X = np.empty((n, 3, size, size))
    y = np.arange(n) % 2
    yy, xx = np.mgrid[:size, :size]
    for i in range(n):
        skin = np.array([224.0, 172.0, 140.0]) + rng.normal(0, 10, 3)
        img = skin[:, None, None] + 40 * smooth_field(rng, size)[None]
        if y[i]:
            cy, cx = rng.uniform(16, 48, 2)
            radius = rng.uniform(8, 18)
            blob = (yy - cy) ** 2 + (xx - cx) ** 2 < radius ** 2
            ulcer = np.array([170.0, 60.0, 50.0])[:, None, None] + rng.normal(0, 35, (3, size, size))
            img = np.where(blob[None], ulcer, img)
        X[i] = np.clip(np.rint(img), 0, 255)
    return X, y


def test_desk_scale_overfit(verdict):
    start = time.perf_counter()
    X, y = synthetic_ulcer_patches()
    Xn = apply_normalizer(fit_normalizer(X), X)
    spec = netzoo.build_dfunet("v5", (3, 64, 64))
    config = TrainConfig(epochs=50, batch_size=8, base_lr=0.001, gamma=0.1, step_fraction=0.33, seed=0)
    history = []

    def full_batch_accuracy(record, params):
        acc = float((netzoo.predict_proba(spec, params, Xn).argmax(axis=1) == y).mean())
        history.append(acc)
        return acc >= 0.99

    params, log, _ = train(spec, netzoo.init_params(spec, 0), Xn, y, config, on_epoch=full_batch_accuracy)
    final = float((netzoo.predict_proba(spec, params, Xn).argmax(axis=1) == y).mean())
    elapsed = time.perf_counter() - start
    ok = final >= 0.99 and len(log.records) <= 50 and elapsed < 900
    verdict("desk-scale overfit", ok,
            f"training accuracy {final:.2f} after {len(log.records)} epoch(s), {elapsed:.0f}s")


# -- 4 ------------------------------------------------------------------------

def test_augmentation_arithmetic(verdict):
    start = time.perf_counter()
    symbolic = augmented_count(1423) == 21_345 and augmented_count(84) == 1_260
    rng = np.random.default_rng(0)
    sample = [PatchRecord(ImageBuffer(rng.integers(0, 256, (24, 24, 3), dtype=np.uint8)), i % 2, f"foot{i}",
                          patch_id="p") for i in range(10)]
    outputs = [out for p in sample for out in augment_patch(p, seed=1)]
    preserved = all(o.source_id == p.source_id and o.label == p.label
                    for p in sample for o in augment_patch(p, seed=1))
    elapsed = time.perf_counter() - start
    ok = symbolic and len(outputs) == 150 == augmented_count(10) and preserved and elapsed < 60
    verdict("augmentation arithmetic", ok, f"1423 -> {augmented_count(1423)}, 84 -> {augmented_count(84)}, "
            f"10 -> {len(outputs)}, {elapsed:.1f}s")


# -- 5 ------------------------------------------------------------------------

def test_auc_matches_pairwise_count(verdict):
    rng = np.random.default_rng(5)
    worst = 0.0
    tied_sets = 0
    for _ in range(200):
        n = int(rng.integers(2, 51))
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        rng.shuffle(labels)
        scores = rng.integers(0, max(2, n // 3), n).astype(float) / 7.0
        tied_sets += len(np.unique(scores)) < n
        worst = max(worst, abs(M.auc(labels, scores).auc - pairwise_auc(labels, scores)))
    verdict("AUC oracle equivalence", worst < 1e-12 and tied_sets > 100,
            f"200 sets, {tied_sets} with ties, max difference {worst:.1e}")


# -- 6 ------------------------------------------------------------------------

def test_reference_confidence_intervals(verdict):
    worst = 0.0
    for _, a, se, (low, high) in REFERENCE_AUC_ROWS:
        lo, hi = M.confidence_interval(a, se)
        worst = max(worst, abs(lo - low), abs(hi - high))
    verdict("reference AUC confidence intervals", worst < 5e-4,
            f"{len(REFERENCE_AUC_ROWS)} rows, max deviation {worst:.1e}")


# -- 7 ------------------------------------------------------------------------

def test_smo_matches_dense_qp(verdict):
    rng = np.random.default_rng(7)
    gap = 0.0
    constraint = 0.0
    mismatches = 0
    for case in range(200):
        n, d = int(rng.integers(2, 7)), int(rng.integers(1, 4))
        X = rng.normal(size=(n, d))
        y = rng.permutation(np.r_[-1.0, 1.0, rng.choice([-1.0, 1.0], n - 2)])
        C = float(rng.choice([0.1, 1.0, 10.0]))
        if case % 2:
            gamma = float(rng.choice([0.5, 1.0, 2.0]))
            kern, K = KernelSpec("rbf", gamma), rbf_kernel(gamma)(X, X)
        else:
            kern, K = KernelSpec("linear"), linear_kernel(X, X)
        model = smo_train(X, y, C=C, kernel=kern, tol=1e-9)
        alpha, _ = alphas_from_model(model, X, y)
        ref = qp_projected_gradient(K, y, C)
        gap = max(gap, abs(dual_value(alpha, y, K) - dual_value(ref, y, K)))
        constraint = max(constraint, abs(alpha @ y), -alpha.min(), alpha.max() - C)
        ref_pred = np.where(K @ (ref * y) + bias_from_alpha(ref, y, K, C) >= 0, 1, -1)
        mismatches += int((svm_predict(model, X) != ref_pred).sum())
    ok = gap < 1e-6 and constraint <= 1e-8 and mismatches == 0
    verdict("SMO against dense QP", ok,
            f"200 datasets, objective gap {gap:.1e}, constraint residual {constraint:.1e}, "
            f"{mismatches} prediction mismatches")


# -- 8 ------------------------------------------------------------------------

def test_metric_formulas(verdict):
    rng = np.random.default_rng(8)
    failures = 0
    for _ in range(1000):
        tp, tn, fp, fn = (int(v) for v in rng.integers(0, 200, 4))
        if tp + tn + fp + fn == 0:
            tp = 1
        c = M.ConfusionCounts(tp, tn, fp, fn)
        report = M.binary_report(c)
        expected = direct_rates(tp, tn, fp, fn)
        terms_ok = (report["sensitivity"] == expected["sensitivity"]
                    and report["specificity"] == expected["specificity"]
                    and report["precision"] == expected["precision"]
                    and report["f_measure"] == expected["f_measure"]
                    and report["accuracy"] == expected["accuracy"])
        failures += not (terms_ok and M.mcc(c) == direct_mcc(tp, tn, fp, fn))
    verdict("metric formulas", failures == 0, f"1000 matrices, {failures} disagreements")


# -- 9 ------------------------------------------------------------------------

def test_checkpoint_round_trip(verdict, tmp_path):
    spec = netzoo.build_dfunet("base", (3, 40, 40))
    params = netzoo.init_params(spec, 9)
    rng = np.random.default_rng(9)
    params["fc14.bias"] = rng.normal(size=2).astype(np.float32).astype(np.float64)
    state = AdamState()
    params = adam_step(params, {k: rng.normal(size=v.shape) for k, v in params.items()}, state, 1e-3)
    first, second = tmp_path / "a.dfun", tmp_path / "b.dfun"
    checkpoint.save_checkpoint(first, spec, params, state, meta={"note": "round trip"})
    loaded = checkpoint.load_checkpoint(first)
    checkpoint.save_checkpoint(second, loaded.spec, loaded.params, loaded.optimizer, loaded.extras, loaded.meta)
    identical = first.read_bytes() == second.read_bytes()
    bit_exact = all(loaded.params[k].astype("<f4").tobytes() == v.astype("<f4").tobytes()
                    for k, v in params.items())
    verdict("checkpoint round trip", identical and bit_exact and loaded.spec == spec,
            f"{first.stat().st_size} bytes, byte-identical {identical}, bit-exact {bit_exact}")
