"""Central finite-difference gradient verification."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError
from .tensor import Tensor, no_grad


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    probes: int
    worst: tuple = field(default_factory=tuple)

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    *,
    h: float = 1e-5,
    max_probes: int | None = None,
    rng: np.random.Generator | None = None,
    name: str = "fn",
    floor: float = 1e-8,
) -> GradCheckResult:
    """Compare autodiff gradients of scalar ``fn(*inputs)`` against central differences.

    Inputs must be float64. With ``max_probes`` set, only that many randomly
    chosen elements of each input are perturbed. ``floor`` bounds the error
    denominator from below; it should sit above the round-off level of the
    numeric estimate (about machine-eps * |loss| / h), otherwise gradients that
    are exactly zero report pure noise as relative error.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise ContractError("gradient checks require float64 inputs")
        t.requires_grad = True
        t.zero_grad()
    loss = fn(*inputs)
    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    rng = rng or np.random.default_rng(0)
    worst, worst_at, probes = 0.0, (), 0
    with no_grad():
        for k, t in enumerate(inputs):
            flat = t.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_probes is not None and flat.size > max_probes:
                idx = rng.choice(flat.size, size=max_probes, replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + h
                fp = fn(*inputs).item()
                flat[i] = orig - h
                fm = fn(*inputs).item()
                flat[i] = orig
                numeric = (fp - fm) / (2 * h)
                a = analytic[k].reshape(-1)[i]
                err = relative_error(a, numeric, floor)
                probes += 1
                if err > worst:
                    worst, worst_at = err, (k, int(i), float(a), float(numeric))
    return GradCheckResult(name, worst, probes, worst_at)


def projection_loss(out: Tensor, seed: int = 0) -> Tensor:
    """Scalar ``sum(out * R)`` with a fixed random R; separates every output element."""
    r = np.random.default_rng(seed).standard_normal(out.shape)
    return (out * Tensor(r, dtype=out.dtype)).sum()


# ---------------------------------------------------------------------------
# the standard suite (CLI ``gradcheck`` and the test-suite share it)
# ---------------------------------------------------------------------------

def _t(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, dtype=np.float64)


def _params(rng, shapes: dict, scale=0.5) -> dict:
    return {k: _t(rng, *s, scale=scale) for k, s in shapes.items()}


def _tensor_checks(rng):
    from . import tensor as T

    a, b = _t(rng, 2, 3, 4), _t(rng, 3, 1)
    yield "add+broadcast", lambda a, b: projection_loss(a + b), [a, b]
    yield "sub/mul", lambda a, b: projection_loss((a - b) * a), [_t(rng, 2, 3, 4), _t(rng, 4)]
    yield "matmul-batched", lambda a, b: projection_loss(a @ b), [_t(rng, 2, 3, 4, 5), _t(rng, 5, 2)]
    yield "sum/mean", lambda a: projection_loss(a.sum(axis=1)) + a.mean() * 3.0, [_t(rng, 3, 4, 2)]
    yield "reshape/transpose", lambda a: projection_loss(T.transpose(a.reshape((4, 6)), (1, 0))), [_t(rng, 2, 3, 4)]
    yield "expand", lambda a: projection_loss(T.expand(a, (3, 4, 5))), [_t(rng, 1, 4, 1)]
    yield "concat/split", lambda a, b: projection_loss(T.split(T.concat([a, b], axis=1), [1, 4], axis=1)[1]), \
        [_t(rng, 2, 2, 3), _t(rng, 2, 3, 3)]
    idx = np.array([0, 2, 2, 1])
    yield "getitem-fancy", lambda a: projection_loss(T.getitem(a, (idx, slice(1, 3)))), [_t(rng, 3, 4)]
    yield "roll", lambda a: projection_loss(T.roll(a, (-1, 2), (1, 2))), [_t(rng, 2, 4, 4)]
    yield "scale/div", lambda a: projection_loss(T.scale(a, 0.7) / 3.0), [_t(rng, 5)]


def _functional_checks(rng):
    from . import functional as F

    yield "linear", lambda x, w, b: projection_loss(F.linear(x, w, b)), [_t(rng, 2, 3, 4), _t(rng, 4, 5), _t(rng, 5)]
    yield "softmax", lambda x: projection_loss(F.softmax(x, axis=-1)), [_t(rng, 3, 6)]
    yield "log_softmax", lambda x: projection_loss(F.log_softmax(x, axis=0)), [_t(rng, 4, 3)]
    labels = np.array([0, 2, 1, 2])
    yield "cross_entropy", lambda x: F.cross_entropy(x, labels), [_t(rng, 4, 3)]
    yield "layernorm", lambda x, g, b: projection_loss(F.layernorm(x, g, b)), \
        [_t(rng, 2, 3, 6), _t(rng, 6), _t(rng, 6)]
    yield "gelu", lambda x: projection_loss(F.gelu(x)), [_t(rng, 4, 5, scale=2.0)]
    yield "dropout", lambda x: projection_loss(F.dropout(x, 0.3, True, np.random.default_rng(1))), [_t(rng, 4, 5)]
    const = rng.standard_normal((3, 4))
    yield "add_constant", lambda x: projection_loss(F.add_constant(x, const)), [_t(rng, 2, 3, 4)]


def _conv_checks(rng):
    from . import functional as F

    yield "conv2d-s1p1", lambda x, w, b: projection_loss(F.conv2d(x, w, b, 1, 1)), \
        [_t(rng, 2, 3, 5, 5), _t(rng, 4, 3, 3, 3), _t(rng, 4)]
    yield "conv2d-s2p1", lambda x, w, b: projection_loss(F.conv2d(x, w, b, 2, 1)), \
        [_t(rng, 1, 2, 7, 7), _t(rng, 3, 2, 3, 3), _t(rng, 3)]
    yield "conv2d-patch", lambda x, w: projection_loss(F.conv2d(x, w, None, 4, 0)), [_t(rng, 1, 3, 8, 8), _t(rng, 2, 3, 4, 4)]
    yield "maxpool2d", lambda x: projection_loss(F.maxpool2d(x, 3, 2, 1)), [_t(rng, 2, 2, 7, 7)]
    yield "adaptive-avg", lambda x: projection_loss(F.adaptive_pool(x, 5, 5, "avg")), [_t(rng, 1, 2, 7, 7)]
    yield "adaptive-max", lambda x: projection_loss(F.adaptive_pool(x, 3, 3, "max")), [_t(rng, 2, 2, 5, 5)]


def _geometry_checks(rng):
    from .geometry import TokenGrid, cyclic_shift, downsample, patch_embed, window_partition, window_reverse

    stem = {"proj.weight": (4, 3, 2, 2), "proj.bias": (4,), "norm.gain": (4,), "norm.bias": (4,)}
    names = list(stem)
    yield "patch_embed", lambda x, *ps: projection_loss(patch_embed(x, dict(zip(names, ps)), 10, 2, 3).tokens), \
        [_t(rng, 1, 3, 10, 10), *_params(rng, stem).values()]
    yield "window_partition", lambda x: projection_loss(
        window_reverse(window_partition(TokenGrid(x, 4), 2) * 2.0, 2, 4, 2).tokens), [_t(rng, 2, 16, 3)]
    yield "cyclic_shift", lambda x: projection_loss(cyclic_shift(TokenGrid(x, 4), 1).tokens), [_t(rng, 1, 16, 2)]
    ds = {"conv.weight": (4, 2, 3, 3), "conv.bias": (4,), "norm.gain": (4,), "norm.bias": (4,)}
    dn = list(ds)
    yield "downsample", lambda x, *ps: projection_loss(downsample(TokenGrid(x, 7), dict(zip(dn, ps)), 3).tokens), \
        [_t(rng, 1, 49, 2), *_params(rng, ds).values()]


def _attn_shapes(c: int, h: int, w: int) -> dict:
    return {"wq": (c, c), "wk": (c, c), "wv": (c, c), "wo": (c, c), "bo": (c,),
            "rel_bias": ((2 * w - 1) ** 2, h), "cls_bias": (3, h)}


def _attention_checks(rng):
    from .attention import cls_attention, shifted_window_attention, w_msa_with_cls
    from .geometry import WindowSet

    c, h, w, side = 4, 2, 2, 4
    shapes = {**_attn_shapes(c, h, w), "gain": (c,), "bias": (c,)}
    names = list(shapes)

    def unpack(ps):
        d = dict(zip(names, ps))
        return d, {"gain": d["gain"], "bias": d["bias"]}

    def ws_of(tok, cls):
        return WindowSet(tok, cls, side, w)

    def wmsa(tok, cls, *ps):
        p, n = unpack(ps)
        out = w_msa_with_cls(ws_of(tok, cls), p, n, h)
        return projection_loss(out.win_tokens) + projection_loss(out.cls_tokens, 1)

    def cls_global(tok, cls, *ps):
        p, n = unpack(ps)
        return projection_loss(cls_attention(ws_of(tok, cls), p, n, h, "global").cls_tokens)

    def cls_window(tok, cls, *ps):
        p, n = unpack(ps)
        return projection_loss(cls_attention(ws_of(tok, cls), p, n, h, "per-window").cls_tokens)

    def swmsa(tok, cls, *ps):
        p, n = unpack(ps)
        return projection_loss(shifted_window_attention(ws_of(tok, cls), p, n, h, 1).win_tokens)

    for name, fn in (("w_msa+cls", wmsa), ("cls-global", cls_global), ("cls-per-window", cls_window),
                     ("sw-msa", swmsa)):
        # some key-projection gradients are ~1e-6; h=1e-4 keeps round-off well below them
        yield name, fn, [_t(rng, 2 * 4, 4, c), _t(rng, 2, 4, c), *_params(rng, shapes).values()], {"h": 1e-4}


def _scffn_checks(rng):
    from .scffn import ffn_forward, param_shapes, scffn_forward

    c, r = 3, 6
    for variant in ("fused", "literal"):
        shapes = param_shapes(c, r, variant, {"embed": 4})
        names = list(shapes)
        yield f"scffn-{variant}", (lambda x, *ps, v=variant, n=names: projection_loss(
            scffn_forward(x, dict(zip(n, ps)), v, "embed"))), [_t(rng, 2, 4, c), *_params(rng, shapes).values()]
    shapes = param_shapes(c, r, "literal")
    names = list(shapes)
    yield "ffn", lambda x, *ps: projection_loss(ffn_forward(x, dict(zip(names, ps)))), \
        [_t(rng, 2, 5, c), *_params(rng, shapes).values()]


def _fim_checks(rng):
    from .fim import fim_fuse

    yield "fim", lambda old, new, proj: projection_loss(fim_fuse(old, new, proj)), \
        [_t(rng, 2, 9, 3), _t(rng, 2, 4, 5), _t(rng, 8, 5)]


def _model_checks(rng, max_probes: int = 5):
    from . import functional as F
    from .config import preset
    from .model import build

    base = preset("tt-nano")
    variants = {
        "nano": base,
        "nano-shift": base.with_(long_range="shift"),
        "nano-literal-perwindow-clshead": base.with_(scffn_variant="literal", cls_attention_mode="per-window",
                                                     head="cls"),
    }
    images = rng.random((2, 3, 32, 32))
    labels = np.array([1, 7])
    for name, cfg in variants.items():
        model = build(cfg, seed=0, dtype=np.float64)
        # unit-scale weights keep gradients well above finite-difference noise
        for t in model.parameters():
            t.data[...] = rng.standard_normal(t.shape) * (0.3 if t.ndim > 1 else 0.5) + (1.0 if t.ndim == 1 else 0.0)
        names = [n for n, _ in model.named_parameters()]

        def loss(*ps, model=model, names=names):
            model.params = dict(zip(names, ps))
            return F.cross_entropy(model(images), labels)

        # deep-stack gradients can be exactly zero (a per-token constant feeding a
        # LayerNorm); a larger step and a floor above round-off keep that honest
        yield name, loss, model.parameters(), {"max_probes": max_probes, "h": 1e-4, "floor": 1e-6}


SUITE = {
    "tensor": _tensor_checks,
    "functional": _functional_checks,
    "conv": _conv_checks,
    "geometry": _geometry_checks,
    "attention": _attention_checks,
    "scffn": _scffn_checks,
    "fim": _fim_checks,
    "model": _model_checks,
}


def run_suite(modules: Sequence[str] | None = None, seed: int = 0, max_probes: int = 24) -> list:
    """Run the named check groups (all when ``modules`` is None) in 64-bit."""
    from .tensor import default_dtype

    modules = list(modules or SUITE)
    unknown = [m for m in modules if m not in SUITE]
    if unknown:
        raise ContractError(f"unknown gradcheck module(s) {unknown}; valid: {', '.join(SUITE)}")
    results = []
    with default_dtype(np.float64):
        for mod in modules:
            rng = np.random.default_rng(seed)
            for item in SUITE[mod](rng):
                name, fn, inputs = item[:3]
                opts = {"max_probes": max_probes, **(item[3] if len(item) > 3 else {})}
                results.append(check_gradients(fn, inputs, rng=rng, name=f"{mod}/{name}", **opts))
    return results
