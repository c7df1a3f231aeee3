"""Minimal float64 tensor autodiff: numpy kernels, reverse-mode tape.

Every op records a backward closure on the result; ``backward`` walks the
graph in reverse topological order and accumulates into ``.grad``. All
data is 64-bit, all updates deterministic.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import CheckError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Seed with dL/dL = 1 and propagate to every reachable parent."""
        if self.data.size != 1:
            raise CheckError("E_INTERNAL_GRAD", "backward needs a scalar loss")
        if not self._parents and not self.requires_grad:
            raise CheckError("E_NO_TAPE", "no recorded computation to differentiate")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self._accum(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def item(self) -> float:
        return float(self.data.reshape(()))


_grad_enabled = True


class no_grad:
    """Context manager suppressing tape recording (cheap evaluation)."""

    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to the parent's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _make(data, parents, backward) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    def bw(g):
        if a.requires_grad:
            a._accum(g * c)

    return _make(a.data * c, (a,), bw)


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; batch dimensions must match exactly when present."""
    if a.data.ndim > 2 or b.data.ndim > 2:
        if a.data.ndim != b.data.ndim or a.data.shape[:-2] != b.data.shape[:-2]:
            raise CheckError("E_INTERNAL_SHAPE",
                             f"batched matmul needs equal batch dims: {a.shape} vs {b.shape}")
    out_data = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            a._accum(g @ _swap(b.data))
        if b.requires_grad:
            b._accum(_swap(a.data) @ g)

    return _make(out_data, (a, b), bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bw(g):
        if x.requires_grad:
            x._accum(g * mask)

    return _make(x.data * mask, (x,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out_data = gain.data * xhat + bias.data

    def bw(g):
        if gain.requires_grad:
            gain._accum(_unbroadcast(g * xhat, gain.data.shape))
        if bias.requires_grad:
            bias._accum(_unbroadcast(g, bias.data.shape))
        if x.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x._accum(inv_std * (dxhat - m1 - xhat * m2))

    return _make(out_data, (x, gain, bias), bw)


def masked_softmax(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Row softmax over the last axis with hard zeros where mask == 0.

    Masked positions get exactly 0 weight, so downstream values contribute
    bit-exact nothing; every row must have at least one unmasked entry.
    """
    allowed = np.broadcast_to(mask != 0, scores.data.shape)
    neg_inf = np.where(allowed, scores.data, -np.inf)
    row_max = neg_inf.max(axis=-1, keepdims=True)
    expd = np.where(allowed, np.exp(neg_inf - row_max), 0.0)
    denom = expd.sum(axis=-1, keepdims=True)
    probs = expd / denom

    def bw(g):
        if scores.requires_grad:
            dot = (g * probs).sum(axis=-1, keepdims=True)
            scores._accum(probs * (g - dot))

    return _make(probs, (scores,), bw)


def softmax_vec(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max()
    e = np.exp(shifted)
    probs = e / e.sum()

    def bw(g):
        if x.requires_grad:
            dot = (g * probs).sum()
            x._accum(probs * (g - dot))

    return _make(probs, (x,), bw)


def take_rows(x: Tensor, indices) -> Tensor:
    """Row gather; used for embedding lookup and span selection."""
    idx = np.asarray(indices, dtype=np.intp)
    out_data = x.data[idx]

    def bw(g):
        if x.requires_grad:
            acc = np.zeros_like(x.data)
            np.add.at(acc, idx, g)
            x._accum(acc)

    return _make(out_data, (x,), bw)


def pick_row(x: Tensor, index: int) -> Tensor:
    def bw(g):
        if x.requires_grad:
            acc = np.zeros_like(x.data)
            acc[index] = g
            x._accum(acc)

    return _make(x.data[index], (x,), bw)


def mean_axis0(x: Tensor) -> Tensor:
    n = x.data.shape[0]

    def bw(g):
        if x.requires_grad:
            x._accum(np.broadcast_to(g / n, x.data.shape).copy())

    return _make(x.data.mean(axis=0), (x,), bw)


def stack_rows(rows: list[Tensor]) -> Tensor:
    out_data = np.stack([r.data for r in rows])

    def bw(g):
        for i, r in enumerate(rows):
            if r.requires_grad:
                r._accum(g[i])

    return _make(out_data, tuple(rows), bw)


def concat_vec(a: Tensor, b: Tensor) -> Tensor:
    na = a.data.shape[0]

    def bw(g):
        if a.requires_grad:
            a._accum(g[:na])
        if b.requires_grad:
            b._accum(g[na:])

    return _make(np.concatenate([a.data, b.data]), (a, b), bw)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.data.shape

    def bw(g):
        if x.requires_grad:
            x._accum(g.reshape(old))

    return _make(x.data.reshape(shape), (x,), bw)


def transpose(x: Tensor, axes) -> Tensor:
    inverse = np.argsort(axes)

    def bw(g):
        if x.requires_grad:
            x._accum(g.transpose(inverse))

    return _make(x.data.transpose(axes), (x,), bw)


def sum_all(x: Tensor) -> Tensor:
    def bw(g):
        if x.requires_grad:
            x._accum(np.full_like(x.data, float(g)))

    return _make(x.data.sum(), (x,), bw)


_PROB_FLOOR = 1e-12


def nll(probs: Tensor, gold: int) -> Tensor:
    """Cross entropy against a one-hot gold: -log(max(p[gold], 1e-12))."""
    p = float(probs.data[gold])
    clamped = max(p, _PROB_FLOOR)

    def bw(g):
        if probs.requires_grad:
            acc = np.zeros_like(probs.data)
            if p > _PROB_FLOOR:
                acc[gold] = -float(g) / clamped
            probs._accum(acc)

    return _make(-np.log(clamped), (probs,), bw)


def mean_scalars(losses: list[Tensor]) -> Tensor:
    n = len(losses)
    out_data = np.array(sum(float(l.data) for l in losses) / n)

    def bw(g):
        for l in losses:
            if l.requires_grad:
                l._accum(np.asarray(float(g) / n))

    return _make(out_data, tuple(losses), bw)


# ---------------------------------------------------------------------------
# Parameters, optimizers, checkpoints

def new_param(store: dict[str, Tensor], name: str, data: np.ndarray) -> Tensor:
    if name in store:
        raise CheckError("E_INTERNAL_PARAM", f"duplicate parameter {name!r}")
    t = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
    store[name] = t
    return t


def zero_grads(store: dict[str, Tensor]) -> None:
    for t in store.values():
        t.grad = None


def global_grad_norm(store: dict[str, Tensor]) -> float:
    total = 0.0
    for name in sorted(store):
        g = store[name].grad
        if g is not None:
            total += float((g * g).sum())
    return float(np.sqrt(total))


class SgdMomentum:
    """Plain momentum SGD with global gradient-norm clipping."""

    def __init__(self, store: dict[str, Tensor], lr: float, momentum: float = 0.9,
                 clip_norm: float = 5.0):
        self.store = store
        self.lr = lr
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.velocity = {name: np.zeros_like(t.data) for name, t in sorted(store.items())}

    def step(self) -> None:
        norm = global_grad_norm(self.store)
        factor = 1.0 if norm <= self.clip_norm else self.clip_norm / norm
        for name in sorted(self.store):
            t = self.store[name]
            if t.grad is None:
                continue
            v = self.velocity[name]
            v *= self.momentum
            v += t.grad * factor
            t.data -= self.lr * v


class AdamW:
    """Decoupled weight-decay Adam, same clipping convention."""

    def __init__(self, store: dict[str, Tensor], lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01, clip_norm: float = 5.0):
        self.store = store
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in sorted(store.items())}
        self.v = {name: np.zeros_like(t.data) for name, t in sorted(store.items())}

    def step(self) -> None:
        norm = global_grad_norm(self.store)
        factor = 1.0 if norm <= self.clip_norm else self.clip_norm / norm
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for name in sorted(self.store):
            t = self.store[name]
            if t.grad is None:
                continue
            g = t.grad * factor
            m = self.m[name]
            v = self.v[name]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * (g * g)
            t.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                t.data -= self.lr * self.weight_decay * t.data


def make_optimizer(kind: str, store: dict[str, Tensor], lr: float, clip_norm: float = 5.0):
    if kind == "momentum":
        return SgdMomentum(store, lr=lr, clip_norm=clip_norm)
    if kind == "adamw":
        return AdamW(store, lr=lr, clip_norm=clip_norm)
    raise CheckError("E_SCHEMA", f"unknown optimizer {kind!r}")


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: int
    n_checked: int


def grad_check(f, store: dict[str, Tensor], eps: float = 1e-5,
               n_samples: int = 200, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients of the scalar function ``f()`` against
    central finite differences over a random coordinate sample."""
    zero_grads(store)
    f().backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in store.items()}

    coords = [(name, i) for name in sorted(store) for i in range(store[name].data.size)]
    rng = np.random.default_rng(seed)
    if len(coords) > n_samples:
        picked = rng.choice(len(coords), size=n_samples, replace=False)
        coords = [coords[int(i)] for i in picked]

    worst = (0.0, "", 0)
    for name, i in coords:
        flat = store[name].data.reshape(-1)
        saved = flat[i]
        flat[i] = saved + eps
        up = f().item()
        flat[i] = saved - eps
        down = f().item()
        flat[i] = saved
        numeric = (up - down) / (2 * eps)
        a = float(analytic[name].reshape(-1)[i])
        rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        if rel > worst[0]:
            worst = (rel, name, i)
    return GradCheckReport(max_rel_error=worst[0], worst_param=worst[1],
                           worst_index=worst[2], n_checked=len(coords))


CHECKPOINT_VERSION = 1


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def save_checkpoint(path: str, config: dict, store: dict[str, Tensor],
                    seed: int | None = None) -> None:
    tensors = {}
    for name in sorted(store):
        data = store[name].data
        if not np.all(np.isfinite(data)):
            raise CheckError("E_DIVERGED", f"parameter {name!r} is not finite")
        tensors[name] = {"shape": list(data.shape), "data": data.reshape(-1).tolist()}
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "config": config,
        "seed": seed,
        "config_hash": config_hash(config),
        "tensors": tensors,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_checkpoint(path: str) -> tuple[dict, dict[str, Tensor], dict]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise CheckError("E_SCHEMA", f"unsupported checkpoint version {doc.get('format_version')!r}")
    store: dict[str, Tensor] = {}
    for name, spec in doc["tensors"].items():
        data = np.asarray(spec["data"], dtype=np.float64).reshape(spec["shape"])
        new_param(store, name, data)
    meta = {"seed": doc.get("seed"), "config_hash": doc.get("config_hash")}
    return doc["config"], store, meta
