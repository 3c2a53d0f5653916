"""Built-in self checks: layer tables, combinatorics and gradients."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .notation import count_combinations
from .nn.architectures import PAPER_TABLES, PAPER_TOTALS, Architecture, aunet, build_architecture, frame_convnet
from .nn.gradcheck import grad_check
from .nn.graph import ModelGraph
from .nn.layers import Activation, BatchNorm, Concat, Conv2d, Dense, Dropout, MaxPool, Upscale

GRAD_TOL = 1e-5

# Published total for "maximum polyphony 6". Exact arithmetic gives this value
# for polyphony 2..5; the 2..6 sum is POLYPHONY_2_TO_6.
PRINTED_PIANO_TOTAL = 41_621_206
POLYPHONY_2_TO_6 = 583_552_442


@dataclass
class Check:
    name: str
    expected: object
    actual: object
    ok: bool

    def line(self) -> str:
        mark = "PASS" if self.ok else "FAIL"
        return f"[{mark}] {self.name}: expected {self.expected}, got {self.actual}"


@dataclass
class Report:
    target: str
    checks: list[Check] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def add(self, name, expected, actual, ok=None):
        self.checks.append(Check(name, expected, actual, expected == actual if ok is None else ok))

    def render(self) -> str:
        lines = [c.line() for c in self.checks]
        lines.append(f"{self.target}: {'all checks passed' if self.ok else 'FAILED'}")
        return "\n".join(lines)


def verify_params(run_forward: bool = True) -> Report:
    """Compare every architecture with its layer table, row by row.

    With ``run_forward`` the output dims are taken from an actual forward
    pass on a zero batch instead of static shape inference.
    """
    rep = Report("PARAMS")
    for arch in Architecture:
        g = build_architecture(arch)
        rows = g.summary()
        if run_forward:
            shapes: list = []
            g.forward(np.zeros((1,) + g.input_shape, dtype=np.float32), record_shapes=shapes)
            observed = ["x".join(map(str, s)) for _, s in shapes]
            rows = [rows[0]] + [(lab, obs + dims[len(obs):] if dims.startswith(obs) else obs, n)
                                for (lab, dims, n), obs in zip(rows[1:], observed)]
        table = PAPER_TABLES[arch]
        rep.add(f"{arch.value} layer count", len(table), len(rows))
        for i, (want, got) in enumerate(zip(table, rows)):
            rep.add(f"{arch.value} row {i} {want[0]}", want, got)
        total, _ = g.param_count()
        rep.add(f"{arch.value} total", PAPER_TOTALS[arch], total)
    return rep


def verify_combinatorics() -> Report:
    rep = Report("COMBINATORICS")
    rep.add("C(23,2) two-note intervals", 253, count_combinations(23, 2, 2))
    rep.add("sum C(88,i), i=2..5 (printed total)", PRINTED_PIANO_TOTAL, count_combinations(88, 2, 5))
    rep.add("sum C(88,i), i=2..6", POLYPHONY_2_TO_6, count_combinations(88, 2, 6))
    for n in range(1, 11):
        rep.add(f"sum C({n},i), i=0..{n}", 2 ** n, count_combinations(n, 0, n))
    pascal = [[1]]
    for n in range(1, 101):
        prev = pascal[-1]
        pascal.append([1] + [prev[k - 1] + prev[k] for k in range(1, n)] + [1])
    bad = [(n, k) for n in range(101) for k in range(n + 1) if count_combinations(n, k, k) != pascal[n][k]]
    rep.add("C(n,k) matches Pascal recurrence for n <= 100", [], bad)
    rep.add("math.comb agrees on C(88,6)", math.comb(88, 6), count_combinations(88, 6, 6))
    return rep


def _layer_cases(rng):
    f64 = np.float64

    def init(layer):
        layer.init(rng, f64)
        return layer

    yield "Dense", init(Dense(16, 5, bias=True)), rng.standard_normal((8, 16)), {}
    yield "Conv same", init(Conv2d(2, 3, 3, bias=True)), rng.standard_normal((2, 2, 5, 9)), {}
    yield "Conv valid", init(Conv2d(2, 3, 3, "valid")), rng.standard_normal((2, 2, 5, 9)), {}
    yield "Conv strided (1,2)", init(Conv2d(2, 3, 3, stride=(1, 2))), rng.standard_normal((2, 2, 6, 8)), {}
    yield "Conv 1x3 valid", init(Conv2d(2, 2, (1, 3), "valid")), rng.standard_normal((2, 2, 1, 9)), {}
    bn = init(BatchNorm(4))
    bn.params["gamma"] = rng.uniform(0.5, 1.5, 4)
    bn.params["beta"] = rng.standard_normal(4)
    yield "BatchNorm 4-D (train)", bn, rng.standard_normal((16, 4, 2, 3)), {}
    yield "BatchNorm 2-D (train)", init(BatchNorm(6)), rng.standard_normal((16, 6)), {}
    yield "MaxPool 1x2", MaxPool((1, 2)), rng.standard_normal((2, 3, 3, 7)), {}
    yield "MaxPool 2x2", MaxPool((2, 2)), rng.standard_normal((2, 3, 4, 6)), {}
    yield "Upscale 2x2", Upscale((2, 2)), rng.standard_normal((2, 3, 3, 4)), {}
    yield "Concat", Concat(), [rng.standard_normal((2, 2, 3, 4)), rng.standard_normal((2, 3, 3, 4))], {}
    # keep inputs away from the ReLU kink
    x = rng.standard_normal((4, 9))
    yield "ReLU", Activation("relu"), np.where(np.abs(x) < 0.05, 0.1, x), {}
    yield "ELU", Activation("elu"), rng.standard_normal((4, 9)), {}
    yield "Sigmoid", Activation("sigmoid"), rng.standard_normal((4, 9)), {}
    yield "Dropout (fixed mask)", Dropout(0.3), rng.standard_normal((4, 9)), {}
    g = ModelGraph("conv-sigmoid-bce", (1, 5, 9))
    g.add(Conv2d(1, 2, 3, bias=True, activation="sigmoid"))
    g.init(1, f64)
    yield "Conv + Sigmoid + BCE", g, rng.standard_normal((2, 1, 5, 9)), {"loss": "bce"}
    yield "BCE with logits", g, rng.standard_normal((2, 1, 5, 9)), {"loss": "bce_logits"}


def _model_cases(rng):
    small = frame_convnet((2, 2, 2), dense=4, n_out=3, window=5, n_bins=37, extra_conv=True, name="small")
    conv = frame_convnet((2, 2, 3), dense=4, n_out=3, window=5, n_bins=21, name="convnet")
    unet = aunet(n_time=16, n_freq=32, base=2, n_out=8, name="aunet")
    for g, batch in ((small, 6), (conv, 6), (unet, 2)):
        g.init(3, np.float64)
        x = rng.standard_normal((batch,) + g.input_shape)
        yield f"{g.name} (reduced)", g, x, {"loss": "bce_logits", "max_checks": 8}


def verify_grads(include_models: bool = True, tol: float = GRAD_TOL) -> Report:
    """Finite-difference checks, double precision, for every layer kind."""
    rep = Report("GRADS")
    rng = np.random.default_rng(1234)
    cases = list(_layer_cases(rng))
    if include_models:
        cases += list(_model_cases(rng))
    for name, target, x, kw in cases:
        err = grad_check(target, x, **kw)
        rep.add(f"{name} max rel. error", f"< {tol:g}", f"{err:.2e}", err < tol)
    return rep


VERIFIERS = {"PARAMS": verify_params, "GRADS": verify_grads, "COMBINATORICS": verify_combinatorics}
