"""Finite-difference oracle suite over every differentiable op and the composite losses.

Each case builds a random scalar function from a seed and returns the worst
relative error between backward and central differences. A mutated op with a
deliberately wrong backward rule serves as the negative control.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import AttentionBlock, Conv1d, LayerNorm, Linear, Tensor, grad_check, grad_check_params, make_op
from .core import functional as F
from .data import Part, synth_dataset, temporal_derivatives
from .generator import GeneratorModel, GeneratorConfig, combined_loss, quantization_consistency_loss
from .semantic import coherence_loss, relevance_loss
from .vqvae import MotionPrior, PriorConfig, vqvae_loss

CORE_TOL = 1e-4
COMPOSITE_TOL = 1e-3
GROUPS = ("tensor", "vqvae", "gen")


@dataclass(frozen=True)
class OracleCase:
    name: str
    group: str
    tolerance: float
    run: Callable[[int], float]


@dataclass(frozen=True)
class OracleResult:
    name: str
    group: str
    seed: int
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error <= self.tolerance


def _weighted(op, *shapes, positive=False, away_from_zero=False):
    """Case ``sum(w * op(x, *consts))`` differentiated in the first operand."""

    def run(seed: int) -> float:
        rng = np.random.default_rng(seed)
        x = rng.normal(size=shapes[0])
        if positive:
            x = np.abs(x) + 0.5
        if away_from_zero:
            x = np.sign(x) * (np.abs(x) + 0.1)
        others = [Tensor(rng.normal(size=s)) for s in shapes[1:]]
        probe = op(Tensor(x), *others)
        w = Tensor(rng.normal(size=probe.shape))
        return grad_check(lambda t: F.sum(op(t, *others) * w), x)

    return run


def _second_operand(op, sa, sb):
    def run(seed: int) -> float:
        rng = np.random.default_rng(seed)
        a, b = Tensor(rng.normal(size=sa)), rng.normal(size=sb)
        w = Tensor(rng.normal(size=op(a, Tensor(b)).shape))
        return grad_check(lambda t: F.sum(op(a, t) * w), b)

    return run


def _layer(build, shape, context=None):
    """Gradient of a random layer with respect to its input and its parameters."""

    def run(seed: int) -> float:
        rng = np.random.default_rng(seed)
        layer = build(rng)
        x = rng.normal(size=shape)
        ctx = None if context is None else Tensor(rng.normal(size=context))
        call = (lambda t: layer(t)) if ctx is None else (lambda t: layer(t, context=ctx))
        w = Tensor(rng.normal(size=call(Tensor(x)).shape))
        e_in = grad_check(lambda t: F.sum(call(t) * w), x)
        e_par = grad_check_params(lambda: F.sum(call(Tensor(x)) * w), layer.parameters(), per_param=6, seed=seed)
        return max(e_in, e_par)

    return run


def _straight_through(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(5, 3))
    target = Tensor(rng.normal(size=(5, 3)))
    w = Tensor(rng.normal(size=(5, 3)))
    return grad_check(lambda t: F.sum(F.square(F.straight_through(t, target)) * w + t * w), x)


def _stop_gradient(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 3))
    w = Tensor(rng.normal(size=(4, 3)))
    return grad_check(lambda t: F.sum(F.stop_gradient(t) * t * w), x)


def _gather(seed: int) -> float:
    rng = np.random.default_rng(seed)
    table = rng.normal(size=(6, 3))
    idx = rng.integers(0, 6, size=8)
    w = Tensor(rng.normal(size=(8, 3)))
    return grad_check(lambda t: F.sum(F.gather_rows(t, idx) * w), table)


def _derivatives(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(7, 4))
    wv, wa = Tensor(rng.normal(size=(7, 4))), Tensor(rng.normal(size=(7, 4)))

    def f(t):
        v, a = temporal_derivatives(t)
        return F.sum(v * wv) + F.sum(a * wa)

    return grad_check(f, x)


def _small_prior(part: Part, seed: int, frames: int = 8) -> MotionPrior:
    cfg = PriorConfig(part.value, frames=frames, hidden=8, latent_dim=4, codebook_size=8)
    return MotionPrior(cfg, seed=seed)


def _vqvae_composite(seed: int) -> float:
    """Five-term prior loss against every parameter of a small prior."""
    rng = np.random.default_rng(seed)
    prior = _small_prior(Part.BODY, seed)
    x = rng.normal(size=(8, Part.BODY.channels))

    def loss():
        z = prior.encode(x)
        q = prior.quantize(z)
        return vqvae_loss(x, prior.decode(q.codes, 8), z, q.codes).total

    return grad_check_params(loss, prior.parameters(), per_param=8, seed=seed)


def _vqvae_input(seed: int) -> float:
    rng = np.random.default_rng(seed)
    prior = _small_prior(Part.BODY, seed)
    x = rng.normal(size=(8, Part.BODY.channels))

    def f(t):
        z = prior.encode(t)
        q = prior.quantize(z)
        return vqvae_loss(t, prior.decode(q.codes, 8), z, q.codes).total

    coords = np.random.default_rng(seed + 1).choice(x.size, size=24, replace=False)
    return grad_check(f, x, coords=coords)


def _coherence(seed: int) -> float:
    rng = np.random.default_rng(seed)
    zh, zb = Tensor(rng.normal(size=(5, 4))), Tensor(rng.normal(size=(5, 4)))
    return grad_check(lambda t: coherence_loss(zh, zb, t), rng.normal(size=(5, 4)))


def _relevance(seed: int) -> float:
    rng = np.random.default_rng(seed)
    target = rng.normal(size=(6, 12))
    lam = (rng.random(6) < 0.5).astype(float)
    lam[0] = 1.0
    # Errors straddle the knee at alpha on both branches. The scale brings
    # gradients (about alpha / size) up to order one so the relative test bites.
    gen = target + rng.choice([-1, 1], size=target.shape) * rng.uniform(0.0, 0.05, size=target.shape)
    scale = target.size / 0.01
    return grad_check(lambda t: relevance_loss(target, t, lam, alpha=0.01) * scale, gen)


def _toy_generator(seed: int):
    data = synth_dataset(seed, n_clips=3, n_speakers=2, frames=16, audio_dim=8, text_dim=6)
    hands = _small_prior(Part.HANDS, seed, frames=16)
    body = _small_prior(Part.BODY, seed + 1, frames=16)
    for p in (hands, body):
        p.freeze()
    cfg = GeneratorConfig(n_speakers=2, audio_dim=8, text_dim=6, speaker_dim=4, model_dim=8, semantic_hidden=8)
    return GeneratorModel(cfg, hands, body, seed=seed), data.samples[:1]


def _quantization_consistency(seed: int) -> float:
    model, batch = _toy_generator(seed)
    rng = np.random.default_rng(seed)
    zh, zb = rng.normal(size=(8, 4)), rng.normal(size=(8, 4))
    return grad_check(lambda t: quantization_consistency_loss(t, zh, zb, model.priors), rng.normal(size=(8, 4)))


def _combined(seed: int) -> float:
    """Stage-2 total against generator parameters on a one-clip batch."""
    model, batch = _toy_generator(seed)
    return grad_check_params(
        lambda: combined_loss(model, batch).total, model.parameters(), per_param=3, seed=seed
    )


def _cases() -> list[OracleCase]:
    core = {
        "add": _weighted(F.add, (3, 4), (4,)),
        "add_rhs": _second_operand(F.add, (3, 4), (1, 4)),
        "sub": _weighted(F.sub, (3, 4), (3, 1)),
        "sub_rhs": _second_operand(F.sub, (3, 4), (3, 1)),
        "mul": _weighted(F.mul, (3, 4), (3, 4)),
        "mul_rhs": _second_operand(F.mul, (3, 4), (4,)),
        "div": _weighted(lambda a, b: F.div(a, F.exp(b)), (3, 4), (3, 4)),
        "div_rhs": _weighted(lambda b, a: F.div(a, F.exp(b)), (4,), (3, 4)),
        "neg": _weighted(F.neg, (3, 4)),
        "power": _weighted(lambda a: F.power(a, 2.5), (3, 4), positive=True),
        "square": _weighted(F.square, (3, 4)),
        "exp": _weighted(F.exp, (3, 4)),
        "log": _weighted(F.log, (3, 4), positive=True),
        "sqrt": _weighted(F.sqrt, (3, 4), positive=True),
        "abs": _weighted(F.abs, (3, 4), away_from_zero=True),
        "tanh": _weighted(F.tanh, (3, 4)),
        "sigmoid": _weighted(F.sigmoid, (3, 4)),
        "silu": _weighted(F.silu, (3, 4)),
        "relu": _weighted(F.relu, (3, 4), away_from_zero=True),
        "sum": _weighted(lambda a: F.sum(a, axis=0), (3, 4)),
        "sum_keepdims": _weighted(lambda a: F.sum(a, axis=1, keepdims=True), (3, 4)),
        "mean": _weighted(lambda a: F.mean(a, axis=1), (3, 4)),
        "reshape": _weighted(lambda a: F.reshape(a, (2, 6)), (3, 4)),
        "transpose": _weighted(F.transpose, (3, 4)),
        "getitem": _weighted(lambda a: F.getitem(a, (slice(1, 3), [0, 0, 2])), (3, 4)),
        "concat": _weighted(lambda a, b: F.concat([a, b, a], axis=1), (3, 4), (3, 2)),
        "stack": _weighted(lambda a, b: F.stack([a, b], axis=0), (3, 4), (3, 4)),
        "matmul": _weighted(F.matmul, (3, 4), (4, 5)),
        "matmul_rhs": _second_operand(F.matmul, (3, 4), (4, 5)),
        "softmax": _weighted(lambda a: F.softmax(a, axis=-1), (3, 5)),
        "softmax_axis0": _weighted(lambda a: F.softmax(a, axis=0), (3, 5)),
        "layer_norm": _weighted(lambda a, g, b: F.layer_norm(a, g, b), (4, 6), (6,), (6,)),
        "layer_norm_gain": _weighted(lambda g, a, b: F.layer_norm(a, g, b), (6,), (4, 6), (6,)),
        "layer_norm_bias": _weighted(lambda b, a, g: F.layer_norm(a, g, b), (6,), (4, 6), (6,)),
        "attention_query": _weighted(lambda q, k, v: F.attention(q, k, v), (3, 4), (5, 4), (5, 4)),
        "attention_key": _weighted(lambda k, q, v: F.attention(q, k, v), (5, 4), (3, 4), (5, 4)),
        "attention_value": _weighted(lambda v, q, k: F.attention(q, k, v), (5, 4), (3, 4), (5, 4)),
        "attention_heads": _weighted(lambda q, k, v: F.attention(q, k, v, heads=2), (3, 4), (5, 4), (5, 4)),
        "unfold_rows": _weighted(lambda a: F.unfold_rows(a, 3, stride=2, pad=1), (7, 3)),
        "repeat_rows": _weighted(lambda a: F.repeat_rows(a, 3), (2, 3)),
        "gather_rows": _gather,
        "stop_gradient": _stop_gradient,
        "straight_through": _straight_through,
        "temporal_derivatives": _derivatives,
        "linear": _layer(lambda r: Linear(4, 3, r), (5, 4)),
        "conv1d": _layer(lambda r: Conv1d(3, 4, r, stride=2), (7, 3)),
        "layer_norm_module": _layer(lambda r: LayerNorm(4), (5, 4)),
        "attention_block": _layer(lambda r: AttentionBlock(4, r), (5, 4)),
        "cross_attention_block": _layer(lambda r: AttentionBlock(4, r, heads=2), (5, 4), context=(3, 4)),
    }
    cases = [OracleCase(n, "tensor", CORE_TOL, f) for n, f in core.items()]
    cases += [
        OracleCase("vqvae_loss_params", "vqvae", COMPOSITE_TOL, _vqvae_composite),
        OracleCase("vqvae_loss_input", "vqvae", COMPOSITE_TOL, _vqvae_input),
        OracleCase("coherence_loss", "gen", COMPOSITE_TOL, _coherence),
        OracleCase("relevance_loss", "gen", COMPOSITE_TOL, _relevance),
        OracleCase("quantization_consistency", "gen", COMPOSITE_TOL, _quantization_consistency),
        OracleCase("combined_loss_params", "gen", COMPOSITE_TOL, _combined),
    ]
    return cases


ORACLE_CASES = _cases()


def run_oracles(group: str = "all", seeds: int = 5) -> list[OracleResult]:
    if group != "all" and group not in GROUPS:
        raise ValueError(f"unknown oracle group {group!r}; choose all or one of {GROUPS}")
    if seeds < 1:
        raise ValueError("need at least one seed")
    return [
        OracleResult(c.name, c.group, s, c.run(s), c.tolerance)
        for c in ORACLE_CASES
        if group in ("all", c.group)
        for s in range(seeds)
    ]


def mutated_sigmoid(x: Tensor) -> Tensor:
    """Sigmoid whose backward rule drops the ``(1 - s)`` factor."""
    s = 1.0 / (1.0 + np.exp(-x.data))
    return make_op(s, (x,), lambda g: (g * s,), "mutated_sigmoid")


def negative_control(seed: int = 0) -> float:
    """Oracle error for the mutated op; must exceed ``CORE_TOL``."""
    return _weighted(mutated_sigmoid, (3, 4))(seed)
