"""Finite-difference gradient suite over every primitive and block.

Used by the ``gradcheck`` CLI command and the acceptance tests. Inputs are
random but tie-free wherever a max-pool is involved; each objective is a
randomly weighted sum of the block output so no output element is special.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import blocks, model, ops
from .gradcheck import grad_check
from .params import ParamStore
from .tensor import Tensor

# per-tensor probe cap; every parameter tensor is still visited
MAX_ELEMENTS = 48

GRADCHECK_CONFIG = model.ModelConfig(
    stage_channels=(4, 8, 8, 8),
    stage_depths=(1, 1, 1, 1),
    decoder_width=4,
    num_classes=3,
    mlp_ratio=2,
)


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    seconds: float


def _tie_free(shape, rng) -> np.ndarray:
    return rng.permutation(int(np.prod(shape))).reshape(shape) * 0.05 + rng.uniform(0, 1e-3)


def _randomize(store: ParamStore, rng, scale=0.5) -> ParamStore:
    for t in store.values():
        t.data[...] = rng.normal(scale=scale, size=t.shape)
    return store


def _weighted(fn: Callable, store: ParamStore, inputs: list[Tensor], rng):
    names = list(store)
    probe: dict = {}

    def objective(*args):
        xs, params = args[: len(inputs)], args[len(inputs) :]
        for name, t in zip(names, params):
            store[name] = t
        out = fn(*xs)
        if "w" not in probe:
            probe["w"] = Tensor(rng.normal(size=out.shape))
        return ops.total(ops.mul(out, probe["w"]))

    return objective, [*inputs, *store.values()]


def _primitive_cases(rng):
    T = lambda shape: Tensor(rng.normal(size=shape))
    return {
        "conv2d": (lambda x, w, b: ops.conv2d(x, w, b, stride=2, padding=2, dilation=2, groups=2),
                   [T((1, 4, 7, 7)), T((4, 2, 3, 3)), T((4,))]),
        "max_pool2d": (lambda x: ops.max_pool2d(x, 2, 2), [Tensor(_tie_free((1, 2, 6, 6), rng))]),
        "bilinear_upsample": (lambda x: ops.bilinear_upsample(x, 7, 5), [T((1, 2, 3, 4))]),
        "adaptive_avg_pool2d": (lambda x: ops.adaptive_avg_pool2d(x, 3, 2), [T((1, 2, 5, 4))]),
        "softmax": (lambda x: ops.softmax(x, 1), [T((2, 4, 2, 2))]),
        "channel_mean": (ops.channel_mean, [T((1, 3, 2, 2))]),
        "spatial_mean": (ops.spatial_mean, [T((1, 3, 2, 2))]),
        "concat": (lambda a, b: ops.concat([a, b], 1), [T((1, 2, 2, 2)), T((1, 1, 2, 2))]),
        "add": (ops.add, [T((1, 3, 2, 2)), T((1, 1, 2, 2))]),
        "sub": (ops.sub, [T((1, 3, 2, 2)), T((1, 3, 1, 1))]),
        "mul": (ops.mul, [T((1, 3, 1, 1)), T((1, 3, 2, 2))]),
        "gelu": (ops.gelu, [T((1, 2, 3, 3))]),
        "group_norm": (lambda x, g, b: ops.group_norm(x, 2, g, b), [T((2, 4, 3, 3)), T((4,)), T((4,))]),
    }


def _block_cases(rng):
    bcfg = blocks.BlockConfig()
    cases = {}

    s = ParamStore()
    blocks.init_sm(s.scope("sm"), 4, rng)
    cases["SM"] = (lambda x, s=s: blocks.sharpening_module(x, s.scope("sm")), s, (1, 4, 5, 5))

    s = ParamStore()
    blocks.init_mcfs(s.scope("m"), 4, 4, bcfg, rng)
    cases["MCFS"] = (lambda x, s=s: blocks.mcfs(x, s.scope("m"), bcfg), s, (1, 4, 5, 5))

    s = ParamStore()
    blocks.init_fsb(s.scope("b"), 4, bcfg, rng)
    cases["FSB"] = (lambda x, s=s: blocks.fsb(x, s.scope("b"), bcfg), s, (1, 4, 5, 5))

    s = ParamStore()
    blocks.init_conv_mlp(s.scope("mlp"), 4, 2, rng)
    cases["conv-MLP"] = (lambda x, s=s: blocks.conv_mlp(x, s.scope("mlp")), s, (1, 4, 5, 5))

    s = ParamStore()
    blocks.init_bem(s.scope("bem"), 3, rng)
    cases["BEM"] = (lambda x, s=s: blocks.bem(x, s.scope("bem")), s, "tie-free", (1, 3, 6, 6))
    return cases


def run_gradient_suite(seed: int = 0, eps: float = 1e-6) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []

    def record(name, objective, inputs, **kw):
        t0 = time.perf_counter()
        err = grad_check(objective, inputs, eps, **kw)
        results.append(CheckResult(name, err, time.perf_counter() - t0))

    for name, (fn, inputs) in _primitive_cases(rng).items():
        objective, args = _weighted(fn, ParamStore(), inputs, rng)
        record(name, objective, args)

    labels = rng.integers(0, 4, size=(2, 3, 3))
    labels[0, 0, 0] = 255
    record("cross_entropy", lambda z: ops.cross_entropy(z, labels), [Tensor(rng.normal(size=(2, 4, 3, 3)))])

    for name, case in _block_cases(rng).items():
        fn, store = case[0], case[1]
        x = Tensor(_tie_free(case[3], rng)) if case[2] == "tie-free" else Tensor(rng.normal(size=case[2]))
        _randomize(store, rng)
        objective, args = _weighted(fn, store, [x], rng)
        record(name, objective, args)

    cfg = GRADCHECK_CONFIG
    full = _randomize(model.build_model(cfg, seed), rng)

    stem_store = ParamStore({k: v for k, v in full.items() if k.startswith("stem.")})
    objective, args = _weighted(
        lambda x: model.stem(x, stem_store, cfg), stem_store, [Tensor(rng.uniform(size=(1, 3, 32, 32)))], rng
    )
    record("stem", objective, args)

    image = Tensor(rng.uniform(size=(1, 3, 32, 32)))
    pyr = model.intermediate_forward(model.backbone_forward(image, full, cfg), full, cfg)
    feats = [Tensor(t.data.copy()) for t in (pyr.f1, pyr.f2, pyr.f3, pyr.f4, pyr.f5)]
    dec_store = ParamStore({k: v for k, v in full.items() if k.startswith("decoder.")})

    def decoder_fn(f1, f2, f3, f4, f5):
        return model.decoder_forward(model.FeaturePyramid(f1, f2, f3, f4, f5), dec_store, cfg, (32, 32))

    objective, args = _weighted(decoder_fn, dec_store, feats, rng)
    record("decoder head", objective, args, max_elements=MAX_ELEMENTS, rng=rng)
    return results


def format_results(results: list[CheckResult], threshold: float = 1e-5) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  max rel error   time (s)  status"]
    for r in results:
        status = "ok" if r.max_rel_error < threshold else "FAIL"
        lines.append(f"{r.name:<{width}}  {r.max_rel_error:13.3e}  {r.seconds:9.2f}  {status}")
    return "\n".join(lines)
