"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough operator coverage for embedding MLPs, typed message passing with
segment sums, and a log-sum-exp classification loss.  Every operation records
its parents and a backward closure; `backward()` walks the tape in reverse
topological order accumulating gradients.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward", "requires_grad")

    def __init__(self, data, parents=(), backward=None, requires_grad=False):
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self._parents = parents
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() expects a scalar loss")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in seen:
                continue
            if expanded:
                seen.add(id(node))
                order.append(node)
                continue
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- graph-building operations ------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.data + other.data, (self, other))

        def back(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.data.shape))
        out._backward = back
        return out

    def __mul__(self, scalar: float):
        out = Tensor(self.data * scalar, (self,))

        def back(g):
            if self.requires_grad:
                self._accumulate(g * scalar)
        out._backward = back
        return out

    def matmul(self, other: "Tensor") -> "Tensor":
        out = Tensor(self.data @ other.data, (self, other))

        def back(g):
            if self.requires_grad:
                self._accumulate(g @ other.data.T)
            if other.requires_grad:
                other._accumulate(self.data.T @ g)
        out._backward = back
        return out

    def relu(self) -> "Tensor":
        mask = self.data > 0
        out = Tensor(self.data * mask, (self,))

        def back(g):
            if self.requires_grad:
                self._accumulate(g * mask)
        out._backward = back
        return out

    def rows(self, idx: np.ndarray) -> "Tensor":
        idx = np.asarray(idx, dtype=np.int64)
        out = Tensor(self.data[idx], (self,))

        def back(g):
            if self.requires_grad:
                acc = np.zeros_like(self.data)
                np.add.at(acc, idx, g)
                self._accumulate(acc)
        out._backward = back
        return out

    def segment_sum(self, seg: np.ndarray, n_segments: int) -> "Tensor":
        seg = np.asarray(seg, dtype=np.int64)
        acc = np.zeros((n_segments,) + self.data.shape[1:])
        np.add.at(acc, seg, self.data)
        out = Tensor(acc, (self,))

        def back(g):
            if self.requires_grad:
                self._accumulate(g[seg])
        out._backward = back
        return out

    def sum(self) -> "Tensor":
        out = Tensor(np.array(self.data.sum()), (self,))

        def back(g):
            if self.requires_grad:
                self._accumulate(np.ones_like(self.data) * g)
        out._backward = back
        return out

    def square_sum(self) -> "Tensor":
        out = Tensor(np.array((self.data ** 2).sum()), (self,))

        def back(g):
            if self.requires_grad:
                self._accumulate(2.0 * self.data * g)
        out._backward = back
        return out

    def reshape(self, *shape) -> "Tensor":
        out = Tensor(self.data.reshape(*shape), (self,))

        def back(g):
            if self.requires_grad:
                self._accumulate(g.reshape(self.data.shape))
        out._backward = back
        return out

    def logsumexp(self) -> "Tensor":
        m = float(self.data.max())
        e = np.exp(self.data - m)
        s = float(e.sum())
        out = Tensor(np.array(np.log(s) + m), (self,))
        soft = e / s

        def back(g):
            if self.requires_grad:
                self._accumulate(soft * g)
        out._backward = back
        return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the parameter's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def concat_cols(parts: list[Tensor]) -> Tensor:
    """Concatenate 2-d tensors along axis 1."""
    out = Tensor(np.concatenate([p.data for p in parts], axis=1), tuple(parts))
    splits = np.cumsum([p.data.shape[1] for p in parts])[:-1]

    def back(g):
        for p, gp in zip(parts, np.split(g, splits, axis=1)):
            if p.requires_grad:
                p._accumulate(gp)
    out._backward = back
    return out


def stack_rows(parts: list[Tensor]) -> Tensor:
    """Stack scalar-or-vector tensors into one flat vector."""
    out = Tensor(np.concatenate([np.atleast_1d(p.data.ravel()) for p in parts]),
                 tuple(parts))
    sizes = [p.data.size for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for p, gp in zip(parts, np.split(g, splits)):
            if p.requires_grad:
                p._accumulate(gp.reshape(p.data.shape))
    out._backward = back
    return out


def parameter(data: np.ndarray) -> Tensor:
    return Tensor(np.asarray(data, dtype=float), requires_grad=True)
