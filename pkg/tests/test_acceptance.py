"""Acceptance criteria 1-10. Each test records one PASS/FAIL line, shown in
the pytest terminal summary; ``python tests/test_acceptance.py`` runs them
standalone and prints the same lines."""

import hashlib
import subprocess
import sys
import time

import numpy as np
import pytest

from cosnet import io, ops
from cosnet.blocks import bem, init_bem, init_sm, sharpening_module
from cosnet.metrics import mean_of_present
from cosnet.model import TOY_CONFIG, build_model, forward, parameter_count
from cosnet.params import ParamStore
from cosnet.sharpen import box_blur, edge_strength, unsharp_mask
from cosnet.suite import format_results, run_gradient_suite
from cosnet.tensor import Tensor, no_grad
from cosnet.train import ToySpec, generate_toy_dataset, train_toy

from oracles import conv2d_loops

RESULTS: dict[int, str] = {}


def report(n: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


def test_01_convolution_oracle():
    rng = np.random.default_rng(2024)
    worst, done = 0.0, 0
    t0 = time.perf_counter()
    while done < 200:
        c = int(rng.integers(1, 5))
        h, w = (int(v) for v in rng.integers(1, 10, size=2))
        k = int(rng.integers(1, 4))
        dil = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, 3))
        groups = int(rng.choice([1, c]))
        cout = c if groups == c else int(rng.integers(1, 5))
        if h + 2 * pad < dil * (k - 1) + 1 or w + 2 * pad < dil * (k - 1) + 1:
            continue
        x = rng.normal(size=(int(rng.integers(1, 3)), c, h, w))
        wt = rng.normal(size=(cout, c // groups, k, k))
        b = rng.normal(size=cout)
        got = ops.conv2d(Tensor(x), Tensor(wt), Tensor(b), stride=stride, padding=pad, dilation=dil, groups=groups).data
        want = conv2d_loops(x, wt, b, stride=stride, padding=pad, dilation=dil, groups=groups)
        assert got.shape == want.shape
        worst = max(worst, float(np.abs(got - want).max()))
        done += 1
    secs = time.perf_counter() - t0
    report(1, "convolution oracle", worst < 1e-9 and secs < 60,
           f"200 configs, max abs err {worst:.2e} (< 1e-9), {secs:.1f} s (< 60 s)")


def test_02_gradient_suite():
    t0 = time.perf_counter()
    results = run_gradient_suite(seed=0)
    secs = time.perf_counter() - t0
    print(format_results(results))
    worst = max(results, key=lambda r: r.max_rel_error)
    names = {r.name for r in results}
    covered = {"SM", "MCFS", "FSB", "BEM", "conv-MLP", "stem", "decoder head", "conv2d"} <= names
    report(2, "gradient suite", covered and worst.max_rel_error < 1e-5 and secs < 300,
           f"{len(results)} checks, worst {worst.max_rel_error:.2e} ({worst.name}) (< 1e-5), {secs:.1f} s (< 300 s)")


def test_03_sm_identity_collapse():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(50):
        store = ParamStore()
        init_sm(store.scope("sm"), 1, rng)
        for t in store.values():
            t.data[...] = rng.normal(scale=2.0, size=t.shape)
        x = rng.normal(size=(1, 1, 1, 1))
        out = sharpening_module(Tensor(x), store.scope("sm")).data
        worst = max(worst, float(np.abs(out - x).max()))
    report(3, "SM identity collapse", worst < 1e-12, f"50 draws, max |out - x| = {worst:.1e} (< 1e-12)")


def test_04_bem_zero_residual():
    rng = np.random.default_rng(4)
    store = ParamStore()
    init_bem(store.scope("bem"), 3, rng)
    worst_const = 0.0
    for _ in range(10):
        f = np.broadcast_to(rng.normal(size=(1, 3, 1, 1)), (1, 3, 8, 8)).copy()
        _, r = bem(Tensor(f), store.scope("bem"), return_residual=True)
        worst_const = max(worst_const, float(np.abs(r.data).max()))
    step = 2.5
    f = np.zeros((1, 3, 8, 8))
    f[..., 3:] = step  # edge falls inside a 2x2 pooling window
    _, r = bem(Tensor(f), store.scope("bem"), return_residual=True)
    edge = float(np.abs(r.data).max())
    report(4, "BEM zero residual", worst_const < 1e-12 and edge > 0.1 * step,
           f"constant max|r| = {worst_const:.1e} (< 1e-12), step-edge max|r| = {edge:.3f} (> {0.1 * step:.2f})")


def test_05_unsharp_algebra():
    rng = np.random.default_rng(5)
    k0_exact, lin = True, 0.0
    for _ in range(20):
        f = rng.uniform(size=(16, 16, 3))
        fb = box_blur(f, 1)
        k0_exact &= bool(np.array_equal(unsharp_mask(f, fb, 0.0)[1], f))
        k1, k2 = rng.uniform(0, 3, size=2)
        g1, g2, g12 = (unsharp_mask(f, fb, k)[1] for k in (k1, k2, k1 + k2))
        lin = max(lin, float(np.abs(g1 + g2 - f - g12).max()))
    step = np.zeros((16, 16, 1))
    step[:, 8:] = 1.0
    before = edge_strength(step)
    after = edge_strength(unsharp_mask(step, box_blur(step, 1), 2.0)[1])
    report(5, "unsharp algebra", k0_exact and lin < 1e-12 and after > before,
           f"k=0 exact: {k0_exact}, linearity err {lin:.1e} (< 1e-12), edge strength {before:.3f} -> {after:.3f}")


def test_06_metric_cross_check():
    rows = [([91.02, 54.47, 63.18, 24.82, 27.14], 52.13), ([91.44, 59.13, 65.92, 37.24, 29.61], 56.67)]
    means = [mean_of_present(ious) for ious, _ in rows]
    ok = all(abs(m - ref) <= 0.005 for m, (_, ref) in zip(means, rows))
    detail = ", ".join(f"{m:.3f} vs {ref:.2f}" for m, (_, ref) in zip(means, rows))
    report(6, "published per-class IoU means", ok, detail + " (+/- 0.005)")


@pytest.mark.slow
def test_07_toy_trainability():
    data = generate_toy_dataset(ToySpec(seed=0))
    t0 = time.perf_counter()
    result = train_toy(TOY_CONFIG, data, 300, seed=0)
    secs = time.perf_counter() - t0
    ratio = result.final_loss / result.losses[0]
    report(7, "toy trainability", ratio < 0.1 and result.train_miou >= 0.9 and secs < 600,
           f"loss {result.losses[0]:.3f} -> {result.final_loss:.4f} (ratio {ratio:.3f} < 0.1), "
           f"train mIoU {result.train_miou:.3f} (>= 0.90), {secs:.0f} s (< 600 s)")


def test_08_ablation_structure():
    data = generate_toy_dataset(ToySpec(seed=1))
    counts, finals = [], []
    for row in (1, 2, 3, 4):
        cfg = TOY_CONFIG.ablation(row)
        counts.append(parameter_count(cfg))
        finals.append(train_toy(cfg, data, 20, seed=row).final_loss)
    increasing = all(a < b for a, b in zip(counts, counts[1:]))
    finite = all(np.isfinite(finals))
    report(8, "ablation structure", increasing and finite,
           f"params {counts} strictly increasing: {increasing}; 20-iter smoke losses "
           + ", ".join(f"{v:.3f}" for v in finals))


def test_09_geometry_contract():
    store = build_model(TOY_CONFIG, 0)
    found = {}
    with no_grad():
        for size in (512, 64):
            logits, pyr = forward(np.zeros((1, 3, size, size)), store, TOY_CONFIG, return_pyramid=True)
            found[size] = ([f.shape[2] for f in (pyr.f1, pyr.f2, pyr.f3, pyr.f4)]
                           + [f.shape[3] for f in (pyr.f1, pyr.f2, pyr.f3, pyr.f4)], logits.shape)
    ok = (found[512] == ([128, 64, 32, 16] * 2, (1, 5, 512, 512))
          and found[64] == ([16, 8, 4, 2] * 2, (1, 5, 64, 64)))
    report(9, "geometry contract", ok,
           f"512 -> {found[512][0][:4]} logits {found[512][1][1:]}; 64 -> {found[64][0][:4]} logits {found[64][1][1:]}")


_LOGIT_SCRIPT = """
import hashlib, numpy as np
from cosnet.model import TOY_CONFIG, build_model, forward
from cosnet.tensor import no_grad
x = np.random.default_rng(11).uniform(size=(2, 3, 64, 64))
with no_grad():
    print(hashlib.sha256(forward(x, build_model(TOY_CONFIG, 7), TOY_CONFIG).data.tobytes()).hexdigest())
"""


def test_10_determinism_and_persistence(tmp_path):
    digests = [
        subprocess.run([sys.executable, "-c", _LOGIT_SCRIPT], capture_output=True, text=True, check=True).stdout.strip()
        for _ in range(2)
    ]
    same_process = digests[0] == digests[1] and len(digests[0]) == 64

    store = build_model(TOY_CONFIG, 7)
    x = np.random.default_rng(11).uniform(size=(2, 3, 64, 64))
    with no_grad():
        before = forward(x, store, TOY_CONFIG).data.tobytes()
    in_process = hashlib.sha256(before).hexdigest() == digests[0]
    path = tmp_path / "model.ckpt"
    io.save_checkpoint(path, store, TOY_CONFIG)
    loaded, cfg = io.load_checkpoint(path, expected=TOY_CONFIG)
    with no_grad():
        after = forward(x, loaded, cfg).data.tobytes()
    round_trip = before == after

    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0x01
    try:
        io.decode_checkpoint(bytes(raw))
        crc_rejected = False
    except io.CheckpointCRCError:
        crc_rejected = True
    report(10, "determinism and persistence", same_process and in_process and round_trip and crc_rejected,
           f"two processes identical: {same_process}, matches in-process: {in_process}, "
           f"checkpoint round trip bitwise: {round_trip}, flipped byte rejected by CRC: {crc_rejected}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
