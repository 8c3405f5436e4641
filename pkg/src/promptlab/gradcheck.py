"""Registry of finite-difference gradient checks over ops, losses and the full objective.

Every check builds a scalar function of one packed input array from a seeded
generator, so each (check, seed) pair is reproducible.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import Tensor, finite_diff_check
from .encoder import DualEncoder, ModelConfig, PromptSet, cross_entropy_loss, predict
from .errors import InvalidParameterError
from .hld import ckd_loss, class_relation, hld_total, ikd_loss
from .stp import angle_relation, fuse_layers, make_triplets, sample_layer_weights, stp_text_loss, stp_vision_loss

TOLERANCE = 1e-4

Builder = Callable[[np.random.Generator], tuple[Callable[[Tensor], Tensor], np.ndarray]]


@dataclass(frozen=True)
class Check:
    name: str
    scope: str
    build: Builder


@dataclass
class CheckResult:
    name: str
    scope: str
    worst: float
    seeds: int

    @property
    def passed(self) -> bool:
        return self.worst < TOLERANCE


REGISTRY: dict[str, Check] = {}


def register(name: str, scope: str):
    def deco(fn: Builder) -> Builder:
        if name in REGISTRY:
            raise InvalidParameterError(f"duplicate gradient check {name!r}")
        REGISTRY[name] = Check(name, scope, fn)
        return fn
    return deco


def scopes() -> list[str]:
    return sorted({c.scope for c in REGISTRY.values()})


def select(scope: str = "all") -> list[Check]:
    """Checks in ``scope``: 'all', a scope name, or a single check name."""
    if scope == "all":
        return list(REGISTRY.values())
    picked = [c for c in REGISTRY.values() if c.scope == scope or c.name == scope]
    if not picked:
        raise InvalidParameterError(f"unknown gradient-check scope {scope!r}; choose from all, {', '.join(scopes())}")
    return picked


def scale_grad(x, factor: float) -> Tensor:
    """Identity in the forward pass; multiplies the incoming gradient by ``factor``."""
    x = ag.as_tensor(x)
    return ag._make(x.data, (x,), lambda g: (g * factor,), "scale_grad")


def _readout(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    w = rng.standard_normal(out.shape)
    return lambda t: ag.tsum(t * w)


def _simple(op: Callable[[Tensor], Tensor], shape, low=-2.0, high=2.0):
    """Builder for a unary op read out through a fixed random linear functional."""
    def build(rng):
        x = rng.uniform(low, high, size=shape)
        w = rng.standard_normal(op(Tensor(x)).shape)
        return (lambda t: ag.tsum(op(t) * w)), x
    return build


# ------------------------------------------------------------------ core ops
for _name, _op, _lo, _hi in (
    ("exp", ag.exp, -2, 2),
    ("log", ag.log, 0.2, 3),
    ("sqrt", ag.sqrt, 0.2, 3),
    ("tanh", ag.tanh, -2, 2),
    ("gelu", ag.gelu, -3, 3),
    ("power", lambda t: ag.power(t, 3.0), -2, 2),
    ("neg_div", lambda t: ag.div(1.0, t) - t, 0.5, 2),
    ("norm", lambda t: ag.norm(t, axis=-1), -2, 2),
    ("normalize", ag.normalize, -2, 2),
    ("softmax", lambda t: ag.softmax(t, temperature=0.5), -3, 3),
    ("log_softmax", ag.log_softmax, -3, 3),
    ("mean_sum", lambda t: ag.mean(t, axis=0) * ag.tsum(t), -1, 1),
    ("reshape_transpose", lambda t: ag.transpose(ag.reshape(t, (-1, 2))) * 2.0, -1, 1),
    ("getitem", lambda t: t[1:, ::2] * t[np.array([0, 0, 2])][:, :3].sum(), -1, 1),
):
    register(_name, "core")(_simple(_op, (4, 6), _lo, _hi))


@register("elementwise", "core")
def _elementwise(rng):
    x = rng.uniform(0.5, 2.0, size=(2, 3, 4))
    w = rng.standard_normal((3, 4))

    def f(t):
        a, b = t[0], t[1]
        out = (a * b + a / b - b ** 2.0) * ag.absolute(a - 3.0) + ag.clip_min(a, 1.0)
        return ag.tsum(out * w)
    return f, x


@register("matmul", "core")
def _matmul(rng):
    x = rng.standard_normal(6 * 5 + 5 * 4 + 5)
    w = rng.standard_normal(6 * 4 + 6)

    def f(t):
        a, b, v = t[:30].reshape(6, 5), t[30:50].reshape(5, 4), t[50:]
        return ag.tsum(ag.concat([(a @ b).reshape(-1), a @ v]) * w)
    return f, x


@register("layer_norm", "core")
def _layer_norm(rng):
    x = rng.standard_normal((5 + 2, 8))
    w = rng.standard_normal((5, 8))

    def f(t):
        return ag.tsum(ag.layer_norm(t[:5], t[5], t[6]) * w)
    return f, x


@register("attention", "core")
def _attention(rng):
    x = rng.standard_normal((3, 2, 5, 4))
    w = rng.standard_normal((2, 5, 4))

    def f(t):
        out, _ = ag.attention(t[0], t[1], t[2])
        return ag.tsum(out * w)
    return f, x


@register("cosine_sim", "core")
def _cosine(rng):
    x = rng.standard_normal((2, 8))
    return (lambda t: ag.cosine_sim(t[0], t[1])), x


@register("stack_concat", "core")
def _stack(rng):
    x = rng.standard_normal((3, 4))
    w = rng.standard_normal((2, 3, 4))
    return (lambda t: ag.tsum(ag.stack([t, ag.concat([t[1:], t[:1]])]) * w)), x


# ------------------------------------------------------------------ losses
def _probs(rng, b, c, scale=2.0):
    z = rng.standard_normal((b, c)) * scale
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


@register("predict", "cls")
def _predict(rng):
    x = rng.standard_normal((4 + 3, 8))
    w = rng.standard_normal((4, 3))
    return (lambda t: ag.tsum(predict(t[:4], t[4:], 0.07) * w)), x


@register("L_cls", "cls")
def _cls(rng):
    b, c, d = 5, 4, 8
    x = rng.standard_normal((b + c, d))
    y = rng.integers(0, c, size=b)
    return (lambda t: cross_entropy_loss(predict(t[:b], t[b:], 0.07), y)), x


@register("angle_relation", "stp")
def _angle(rng):
    x = rng.standard_normal((3, 8))
    return (lambda t: angle_relation(t, 0, 1, 2)), x


@register("L_vision", "stp")
def _vision(rng):
    b, d = int(rng.integers(4, 7)), 8
    teacher = rng.standard_normal((b, d))
    x = teacher + 0.5 * rng.standard_normal((b, d))
    triplets = make_triplets(b, rng, 64)
    return (lambda t: stp_vision_loss(teacher, t, triplets)), x


@register("fuse_layers", "stp")
def _fuse(rng):
    x = rng.standard_normal((4, 3, 8))
    w = sample_layer_weights(4, 4.0, 1.0, rng, 0.5)
    out = rng.standard_normal((3, 8))
    return (lambda t: ag.tsum(fuse_layers([t[i] for i in range(4)], w) * out)), x


@register("L_text", "stp")
def _text(rng):
    teacher = rng.standard_normal((4, 8))
    x = teacher + rng.choice([-1.0, 1.0], size=(4, 8)) * rng.uniform(0.1, 1.0, size=(4, 8))
    return (lambda t: stp_text_loss(teacher, t)), x


@register("L_ikd", "hld")
def _ikd(rng):
    teacher = _probs(rng, 5, 4)
    x = rng.standard_normal((5, 4))
    return (lambda t: ikd_loss(teacher, ag.softmax(t))), x


@register("class_relation", "hld")
def _relation(rng):
    x = rng.standard_normal((5, 4))
    w = rng.standard_normal((4, 4))
    return (lambda t: ag.tsum(class_relation(ag.softmax(t)) * w)), x


@register("L_ckd", "hld")
def _ckd(rng):
    teacher = class_relation(_probs(rng, 5, 4)).data
    x = rng.standard_normal((5, 4))
    return (lambda t: ckd_loss(teacher, class_relation(ag.softmax(t)))), x


@register("L_hld", "hld")
def _hld(rng):
    tp = _probs(rng, 5, 4)
    x = rng.standard_normal((5, 4))

    def f(t):
        sp = ag.softmax(t)
        return hld_total(ikd_loss(tp, sp), ckd_loss(class_relation(tp), class_relation(sp)))
    return f, x


# ------------------------------------------------------------------ full objective
TINY = ModelConfig(embed_dim=8, layers=2, heads=2, patch_size=4, image_size=8, vocab_size=8, max_text_len=4,
                   prompt_depth=2, n_visual_prompts=2, n_text_prompts=2)


@register("L_total", "total")
def _total(rng):
    """cls + lambda * HLD + gamma * STP of a tiny frozen model, w.r.t. all prompt tokens."""
    from .bench.train import TrainConfig, objective  # the trainer imports this package's losses

    teacher = DualEncoder(TINY, rng).freeze()
    b, c = 4, 3
    images = rng.uniform(0, 1, size=(b, 3, TINY.image_size, TINY.image_size))
    y = rng.integers(0, c, size=b)
    tokens = np.stack([np.zeros(c, dtype=int), np.arange(1, c + 1)], axis=1)
    cfg = TrainConfig(lam=1.0, gamma=3.0, fif=False)
    w = sample_layer_weights(TINY.layers, float(TINY.layers), 1.0, rng, 0.5)
    triplets = make_triplets(b, rng)
    init = PromptSet.init(TINY, rng, std=0.5)
    shapes = [p.shape for p in init.visual + init.textual]
    sizes = [int(np.prod(s)) for s in shapes]
    x = np.concatenate([p.data.reshape(-1) for p in init.visual + init.textual])
    depth = TINY.prompt_depth

    def f(t):
        pieces, start = [], 0
        for shape, size in zip(shapes, sizes):
            pieces.append(t[start:start + size].reshape(shape))
            start += size
        prompts = PromptSet(pieces[:depth], pieces[depth:])
        total, _ = objective(teacher, prompts, images, y, tokens, cfg, None, w, triplets)
        return total
    return f, x


def run_gradcheck(scope: str = "all", seeds=range(10), corrupt: str | None = None,
                  h: float = 1e-5) -> list[CheckResult]:
    """Worst relative error of every selected check over ``seeds``.

    ``corrupt`` names a check whose analytic gradient is scaled by 1.5; it is
    a negative control for the harness itself.
    """
    if corrupt is not None and corrupt not in REGISTRY:
        raise InvalidParameterError(f"unknown gradient check {corrupt!r}")
    results = []
    for check in select(scope):
        worst = 0.0
        for seed in seeds:
            f, x = check.build(np.random.default_rng([seed, 7]))
            if check.name == corrupt:
                f = (lambda g: (lambda t: g(scale_grad(t, 1.5))))(f)
            worst = max(worst, finite_diff_check(f, x, h))
        results.append(CheckResult(check.name, check.scope, worst, len(list(seeds))))
    return results


def format_results(results, elapsed: float | None = None) -> str:
    lines = [f"{'check':20s} {'scope':6s} {'max rel err':>12s}  status"]
    for r in results:
        lines.append(f"{r.name:20s} {r.scope:6s} {r.worst:12.3e}  {'ok' if r.passed else 'FAIL'}")
    failed = [r.name for r in results if not r.passed]
    tail = f"{len(results) - len(failed)}/{len(results)} checks below {TOLERANCE:g}"
    if elapsed is not None:
        tail += f" in {elapsed:.1f}s"
    if failed:
        tail += "; failing: " + ", ".join(failed)
    return "\n".join(lines + [tail])


def main_check(scope: str = "all", seeds: int = 10, corrupt: str | None = None) -> tuple[int, str]:
    start = time.perf_counter()
    results = run_gradcheck(scope, range(seeds), corrupt)
    text = format_results(results, time.perf_counter() - start)
    return (0 if all(r.passed for r in results) else 1), text
