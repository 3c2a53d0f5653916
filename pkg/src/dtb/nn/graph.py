"""Directed acyclic layer graphs with forward/backward passes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Concat, Dropout, Layer, ShapeError, _Affine


@dataclass
class Node:
    name: str
    layer: Layer
    inputs: tuple[str, ...]


class ModelGraph:
    """Layers in topological order; the last node is the output.

    The pseudo-node ``"input"`` names the network input. Only ``Concat``
    nodes may have more than one predecessor.
    """

    def __init__(self, name: str, input_shape: tuple[int, ...], spec: dict | None = None):
        self.name = name
        self.input_shape = tuple(input_shape)
        self.spec = spec or {"name": name}
        self.nodes: list[Node] = []
        self._shapes: dict[str, tuple[int, ...]] = {"input": self.input_shape}

    # -- construction --------------------------------------------------------

    def add(self, layer: Layer, inputs: str | tuple[str, ...] | None = None, name: str | None = None) -> str:
        if inputs is None:
            inputs = (self.nodes[-1].name if self.nodes else "input",)
        elif isinstance(inputs, str):
            inputs = (inputs,)
        for src in inputs:
            if src not in self._shapes:
                raise ValueError(f"unknown input node {src!r}")
        if len(inputs) > 1 and not isinstance(layer, Concat):
            raise ValueError("only Concat nodes may have several inputs")
        name = name or f"{len(self.nodes):02d}_{layer.kind.lower()}"
        in_shapes = [self._shapes[s] for s in inputs]
        try:
            shape = layer.output_shape(in_shapes if isinstance(layer, Concat) else in_shapes[0])
        except ShapeError as exc:
            raise ShapeError(f"layer {name}: {exc}") from None
        self._shapes[name] = shape
        self.nodes.append(Node(name, layer, tuple(inputs)))
        return name

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self._shapes[self.nodes[-1].name]

    def shape_of(self, node: str) -> tuple[int, ...]:
        return self._shapes[node]

    def init(self, seed: int = 0, dtype=np.float32) -> "ModelGraph":
        rng = np.random.default_rng(seed)
        for node in self.nodes:
            node.layer.init(rng, dtype)
        self.reseed(seed)
        return self

    def reseed(self, seed: int) -> None:
        """Restart every dropout stream from ``seed``."""
        for i, node in enumerate(self.nodes):
            if isinstance(node.layer, Dropout):
                node.layer.rng = np.random.default_rng([seed, i])

    def set_dropout(self, active: bool) -> None:
        for node in self.nodes:
            if isinstance(node.layer, Dropout):
                node.layer.active = active

    def astype(self, dtype) -> "ModelGraph":
        for node in self.nodes:
            node.layer.astype(dtype)
        return self

    @property
    def dtype(self):
        for node in self.nodes:
            for arr in node.layer.params.values():
                return arr.dtype
        return np.dtype(np.float32)

    # -- passes --------------------------------------------------------------

    def forward(self, x: np.ndarray, train: bool = False, logits: bool = False,
                record_shapes: list | None = None) -> np.ndarray:
        """Run the graph. ``logits=True`` skips a fused output sigmoid."""
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"{self.name}: expected input (N, {', '.join(map(str, self.input_shape))}), "
                             f"got {x.shape}")
        out_layer = self.nodes[-1].layer
        if isinstance(out_layer, _Affine):
            out_layer.emit_logits = logits
        vals = {"input": x}
        for node in self.nodes:
            args = [vals[s] for s in node.inputs]
            try:
                y = node.layer.forward(args if isinstance(node.layer, Concat) else args[0], train)
            except ValueError as exc:
                raise ShapeError(f"{self.name}: layer {node.name} failed on input "
                                 f"{[a.shape for a in args]}: {exc}") from exc
            vals[node.name] = y
            if record_shapes is not None:
                record_shapes.append((node.name, tuple(y.shape[1:])))
        return vals[self.nodes[-1].name]

    def backward(self, grad: np.ndarray) -> np.ndarray:
        """Backpropagate ``grad`` (w.r.t. the last forward's output) to the input."""
        acc: dict[str, np.ndarray] = {self.nodes[-1].name: grad}
        for node in reversed(self.nodes):
            g = acc.pop(node.name, None)
            if g is None:
                continue
            gin = node.layer.backward(g)
            if not isinstance(node.layer, Concat):
                gin = [gin]
            for src, gi in zip(node.inputs, gin):
                acc[src] = acc[src] + gi if src in acc else gi
        return acc["input"]

    def __call__(self, x, train=False):
        return self.forward(x, train)

    # -- parameters ----------------------------------------------------------

    def parameters(self):
        """Yield ``(qualified name, layer, key)`` for every learnable array."""
        for node in self.nodes:
            for key in node.layer.params:
                yield f"{node.name}.{key}", node.layer, key

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {}
        for node in self.nodes:
            for key, arr in list(node.layer.params.items()) + list(node.layer.buffers.items()):
                state[f"{node.name}.{key}"] = arr.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = set()
        for node in self.nodes:
            for store in (node.layer.params, node.layer.buffers):
                for key in store:
                    qn = f"{node.name}.{key}"
                    expected.add(qn)
                    if qn not in state:
                        raise KeyError(f"state is missing {qn}")
                    if state[qn].shape != store[key].shape:
                        raise ShapeError(f"{qn}: stored shape {state[qn].shape} != model {store[key].shape}")
                    store[key] = np.array(state[qn], dtype=store[key].dtype)
        extra = set(state) - expected
        if extra:
            raise KeyError(f"state has unknown entries: {sorted(extra)}")

    def param_count(self) -> tuple[int, list[tuple[str, int]]]:
        per_layer = [(node.name, node.layer.param_count()) for node in self.nodes]
        return sum(n for _, n in per_layer), per_layer

    def summary(self) -> list[tuple[str, str, int]]:
        """Rows of (layer label, output dims, parameter count), input first."""
        rows = [("Input", "x".join(map(str, self.input_shape)), 0)]
        for node in self.nodes:
            dims = "x".join(map(str, self._shapes[node.name])) + node.layer.dims_suffix()
            rows.append((node.layer.label(), dims, node.layer.param_count()))
        return rows
