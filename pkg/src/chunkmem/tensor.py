"""Reverse-mode autodiff on flat numpy arrays.

A GradTape records every differentiable op as it executes, so the node list
is already topologically ordered; backward() walks it once in reverse.
Tensors are plain values (an ndarray plus an optional link to the tape node
that produced them) and are cheap to copy between threads, but a single tape
must only ever be used from one thread.

64-bit floats are the default so finite-difference checks have headroom;
training code may opt into 32-bit via the dtype argument.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeError


class Tensor:
    """An ndarray with an optional link to the tape node that made it."""

    __slots__ = ("data", "_tape", "_node")

    def __init__(self, data, dtype=None):
        a = np.asarray(data)
        if dtype is not None:
            a = a.astype(dtype, copy=False)
        elif a.dtype not in (np.float32, np.float64):
            a = a.astype(np.float64)
        self.data = a
        self._tape = None
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def copy(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape of the operand it belongs to."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Gradients:
    """Result of backward(): maps watched/produced tensors to gradients.

    Tensors the loss never reached get an exact zero of their own shape.
    """

    def __init__(self, tape, grads):
        self._tape = tape
        self._grads = grads

    def __getitem__(self, t: Tensor) -> Tensor:
        if t._tape is not self._tape or t._node is None:
            raise ContractError("tensor was not watched on or produced by this tape")
        g = self._grads[t._node]
        if g is None:
            g = np.zeros_like(t.data)
        return Tensor(g)


class GradTape:
    """Append-only op recorder; ops are methods so recording is explicit.

    One tape per forward pass. Constants (tensors never watched and not
    produced by this tape) flow through ops without creating nodes, so
    detached memory contents cost nothing at backward time.
    """

    def __init__(self, recording: bool = True):
        self._nodes = []  # (input node ids, backward fn); fn None for leaves
        self.recording = recording

    def __len__(self):
        return len(self._nodes)

    def watch(self, t: Tensor) -> Tensor:
        """Register a leaf (parameter) so its gradient can be read later."""
        if not self.recording:
            return t
        if t._tape is self and t._node is not None:
            return t
        t._tape = self
        t._node = len(self._nodes)
        self._nodes.append(((), None))
        return t

    def _idx(self, t: Tensor):
        if t._tape is None:
            return None
        if t._tape is not self:
            raise ContractError(
                "tensor belongs to a different tape; detach it or watch it here"
            )
        return t._node

    def _emit(self, data, inputs, bwd) -> Tensor:
        out = Tensor(data)
        if not self.recording:
            return out
        ids = tuple(self._idx(x) for x in inputs)
        if all(i is None for i in ids):
            return out  # pure-constant subgraph, nothing to differentiate
        out._tape = self
        out._node = len(self._nodes)
        self._nodes.append((ids, bwd))
        return out

    # ---- arithmetic ----

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        try:
            np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}")
        ash, bsh = a.shape, b.shape

        def bwd(g):
            return (_unbroadcast(g, ash), _unbroadcast(g, bsh))

        return self._emit(a.data + b.data, (a, b), bwd)

    def subtract(self, a: Tensor, b: Tensor) -> Tensor:
        try:
            np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise ShapeError(f"subtract: cannot broadcast {a.shape} with {b.shape}")
        ash, bsh = a.shape, b.shape

        def bwd(g):
            return (_unbroadcast(g, ash), _unbroadcast(-g, bsh))

        return self._emit(a.data - b.data, (a, b), bwd)

    def multiply(self, a: Tensor, b: Tensor) -> Tensor:
        try:
            np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise ShapeError(f"multiply: cannot broadcast {a.shape} with {b.shape}")
        ad, bd = a.data, b.data
        ash, bsh = a.shape, b.shape

        def bwd(g):
            return (_unbroadcast(g * bd, ash), _unbroadcast(g * ad, bsh))

        return self._emit(ad * bd, (a, b), bwd)

    def scale(self, a: Tensor, s: float) -> Tensor:
        s = float(s)

        def bwd(g):
            return (g * s,)

        return self._emit(a.data * s, (a,), bwd)

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError(f"matmul needs 2-D operands, got {a.shape} @ {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
        ad, bd = a.data, b.data
        ash, bsh = a.shape, b.shape

        def bwd(g):
            da = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ash)
            if len(bsh) == 2 and len(ash) > 2:
                # batched x 2-D weight: collapse the batch instead of
                # materializing a per-batch (d, d) gradient stack
                db = np.matmul(ad.reshape(-1, ash[-1]).T,
                               g.reshape(-1, g.shape[-1]))
            else:
                db = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bsh)
            return (da, db)

        return self._emit(np.matmul(ad, bd), (a, b), bwd)

    # ---- shape moves ----

    def reshape(self, a: Tensor, shape) -> Tensor:
        ash = a.shape

        def bwd(g):
            return (g.reshape(ash),)

        return self._emit(a.data.reshape(shape), (a,), bwd)

    def transpose(self, a: Tensor, perm) -> Tensor:
        perm = tuple(perm)
        inv = tuple(np.argsort(perm))

        def bwd(g):
            return (g.transpose(inv),)

        return self._emit(a.data.transpose(perm), (a,), bwd)

    def swap_last2(self, a: Tensor) -> Tensor:
        def bwd(g):
            return (np.swapaxes(g, -1, -2),)

        return self._emit(np.swapaxes(a.data, -1, -2), (a,), bwd)

    def concat(self, parts, axis: int = 0) -> Tensor:
        parts = list(parts)
        if not parts:
            raise ContractError("concat of an empty list")
        sizes = [p.shape[axis] for p in parts]
        splits = np.cumsum(sizes)[:-1]

        def bwd(g):
            return tuple(np.split(g, splits, axis=axis))

        return self._emit(
            np.concatenate([p.data for p in parts], axis=axis), tuple(parts), bwd
        )

    def slice_ax(self, a: Tensor, axis: int, start: int, stop: int) -> Tensor:
        axis = axis % a.ndim
        sl = tuple(
            slice(start, stop) if i == axis else slice(None) for i in range(a.ndim)
        )
        ash = a.shape

        def bwd(g):
            out = np.zeros(ash, dtype=g.dtype)
            out[sl] = g
            return (out,)

        return self._emit(a.data[sl], (a,), bwd)

    def gather_last(self, a: Tensor, idx: np.ndarray) -> Tensor:
        """out[..., j] = a[..., idx[..., j]]; idx leading dims must match a."""
        idx = np.asarray(idx)
        if idx.ndim != a.ndim or idx.shape[:-1] != a.shape[:-1]:
            raise ShapeError(f"gather_last: index {idx.shape} against {a.shape}")
        ad = a.data
        w = ad.shape[-1]
        nrows = ad.size // w
        # flat bin per (row, selected column); bincount does the scatter-add
        lin = (np.arange(nrows, dtype=np.int64)[:, None] * w
               + idx.reshape(nrows, -1)).ravel()

        def bwd(g):
            out = np.bincount(lin, weights=g.ravel(), minlength=ad.size)
            return (out.reshape(ad.shape).astype(ad.dtype, copy=False),)

        return self._emit(np.take_along_axis(ad, idx, axis=-1), (a,), bwd)

    def take_rows(self, a: Tensor, idx: np.ndarray) -> Tensor:
        """Batched row selection along one middle axis.

        a is (lead..., N, tail...) and idx is (lead..., I) with matching lead
        dims; out[..., i, :] = a[..., idx[..., i], :]. Duplicate selections
        accumulate gradient into the shared row.
        """
        idx = np.asarray(idx)
        nl = idx.ndim - 1
        lead = a.shape[:nl]
        if lead != idx.shape[:nl]:
            raise ShapeError(
                f"take_rows: lead dims {idx.shape[:nl]} do not match {lead}")
        if a.ndim <= nl:
            raise ShapeError(f"take_rows: no row axis in {a.shape}")
        n = a.shape[nl]
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise ShapeError(f"take_rows: index out of range for {n} rows")
        tail = a.shape[nl + 1:]
        nb = int(np.prod(lead, dtype=np.int64)) if lead else 1
        af = a.data.reshape((nb, n) + tail)
        idf = idx.reshape(nb, -1)
        ni = idf.shape[1]
        rows = np.arange(nb)[:, None]
        ash = a.shape
        out = af[rows, idf]

        def bwd(g):
            # scatter-add as a one-hot matmul: N x I times I x tail
            g2 = g.reshape(nb, ni, -1)
            onehot = np.zeros((nb, n, ni), dtype=g2.dtype)
            onehot[rows, idf, np.arange(ni)[None, :]] = 1.0
            return (np.matmul(onehot, g2).reshape(ash),)

        return self._emit(out.reshape(lead + (ni,) + tail), (a,), bwd)

    def embed_lookup(self, table: Tensor, idx: np.ndarray) -> Tensor:
        """Rows of an embedding table; duplicate indices accumulate grads."""
        idx = np.asarray(idx)
        if table.ndim != 2:
            raise ShapeError(f"embed_lookup table must be 2-D, got {table.shape}")
        if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
            raise ContractError(
                f"embed_lookup index out of range for table of {table.shape[0]} rows"
            )
        td = table.data
        d = td.shape[1]

        def bwd(g):
            out = np.zeros_like(td)
            np.add.at(out, idx.ravel(), g.reshape(-1, d))
            return (out,)

        return self._emit(td[idx], (table,), bwd)

    # ---- nonlinearities ----

    def relu(self, a: Tensor) -> Tensor:
        mask = a.data > 0

        def bwd(g):
            return (g * mask,)

        return self._emit(np.where(mask, a.data, 0.0), (a,), bwd)

    def tanh(self, a: Tensor) -> Tensor:
        out = np.tanh(a.data)

        def bwd(g):
            return (g * (1.0 - out * out),)

        return self._emit(out, (a,), bwd)

    def sigmoid(self, a: Tensor) -> Tensor:
        out = _stable_sigmoid(a.data)

        def bwd(g):
            return (g * out * (1.0 - out),)

        return self._emit(out, (a,), bwd)

    # ---- reductions and normalizers ----

    def reduce_sum(self, a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
        ash = a.shape

        def bwd(g):
            if axis is None:
                return (np.broadcast_to(g, ash).copy(),)
            ge = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(ge, ash).copy(),)

        return self._emit(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)

    def mean_pool(self, a: Tensor, axis: int) -> Tensor:
        axis = axis % a.ndim
        n = a.shape[axis]
        ash = a.shape

        def bwd(g):
            ge = np.expand_dims(g, axis) / n
            return (np.broadcast_to(ge, ash).copy(),)

        return self._emit(a.data.mean(axis=axis), (a,), bwd)

    def softmax(self, a: Tensor, axis: int = -1) -> Tensor:
        x = a.data
        m = x.max(axis=axis, keepdims=True)
        e = np.exp(x - m)
        out = e / e.sum(axis=axis, keepdims=True)

        def bwd(g):
            dot = (g * out).sum(axis=axis, keepdims=True)
            return (out * (g - dot),)

        return self._emit(out, (a,), bwd)

    def layer_norm(
        self, a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5
    ) -> Tensor:
        """Normalize over the last axis, then scale and shift."""
        d = a.shape[-1]
        if gain.shape != (d,) or bias.shape != (d,):
            raise ShapeError(
                f"layer_norm: gain {gain.shape} / bias {bias.shape} against last dim {d}"
            )
        x = a.data
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        gd = gain.data

        def bwd(g):
            gh = g * gd
            mean_gh = gh.mean(axis=-1, keepdims=True)
            mean_ghx = (gh * xhat).mean(axis=-1, keepdims=True)
            dx = inv * (gh - mean_gh - xhat * mean_ghx)
            red = tuple(range(g.ndim - 1))
            dgain = (g * xhat).sum(axis=red)
            dbias = g.sum(axis=red)
            return (dx, dgain, dbias)

        return self._emit(xhat * gd + bias.data, (a, gain, bias), bwd)

    def cross_entropy_logits(
        self, logits: Tensor, target, reduction: str = "mean"
    ) -> Tensor:
        """Mean (or sum) of -log softmax(logits)[target] over leading dims.

        `target` is an int or an int array matching the leading shape.
        """
        if reduction not in ("mean", "sum"):
            raise ContractError(f"unknown reduction {reduction!r}")
        x = logits.data
        n = x.shape[-1]
        t = np.asarray(target)
        if t.shape != x.shape[:-1]:
            raise ShapeError(
                f"cross_entropy_logits: targets {t.shape} against logits {x.shape}"
            )
        if t.size and (t.min() < 0 or t.max() >= n):
            raise ContractError(f"target class out of range for {n} classes")
        m = x.max(axis=-1, keepdims=True)
        lse = m[..., 0] + np.log(np.exp(x - m).sum(axis=-1))
        picked = np.take_along_axis(x, t[..., None], axis=-1)[..., 0]
        losses = lse - picked
        rows = max(1, losses.size)
        val = losses.sum() if reduction == "sum" else losses.sum() / rows

        def bwd(g):
            p = np.exp(x - m)
            p /= p.sum(axis=-1, keepdims=True)
            np.subtract.at(p, tuple(np.indices(t.shape)) + (t,), 1.0)
            if reduction == "mean":
                p /= rows
            return (p * g,)

        return self._emit(val, (logits,), bwd)

    # ---- gradient control ----

    def stop_gradient(self, a: Tensor) -> Tensor:
        """Identity forward; no gradient ever flows into `a` through this."""
        out = Tensor(a.data)  # shares the array, so forward is bitwise equal
        return out

    # ---- reverse pass ----

    def backward(self, loss: Tensor) -> Gradients:
        """Walk the tape once in reverse from a scalar loss."""
        if not self.recording:
            raise ContractError("tape was created with recording=False")
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self or loss._node is None:
            raise ContractError("loss was not produced by this tape")
        grads = [None] * len(self._nodes)
        grads[loss._node] = np.ones_like(loss.data)
        for i in range(loss._node, -1, -1):
            g = grads[i]
            if g is None:
                continue
            ids, bwd = self._nodes[i]
            if bwd is None:
                continue
            for j, c in zip(ids, bwd(g)):
                if j is None:
                    continue
                grads[j] = c if grads[j] is None else grads[j] + c
        return Gradients(self, grads)
