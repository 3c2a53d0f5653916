"""ConvNet, SmallConvNet and AUNet builders.

The exact-size builders reproduce the published layer tables. Convs and
denses that feed a batchnorm carry no bias; output layers do.
"""
from __future__ import annotations

import enum

from .graph import ModelGraph
from .layers import Activation, BatchNorm, Concat, Conv2d, Dense, Dropout, MaxPool, Upscale


class Architecture(str, enum.Enum):
    CONVNET = "CONVNET"
    SMALLCONVNET = "SMALLCONVNET"
    AUNET = "AUNET"


def _conv_block(g: ModelGraph, in_ch: int, out_ch: int, kernel=3, padding="same", act="relu",
                stride=1) -> str:
    g.add(Conv2d(in_ch, out_ch, kernel, padding=padding, stride=stride))
    g.add(BatchNorm(out_ch))
    return g.add(Activation(act))


def frame_convnet(channels=(32, 32, 64), dense: int = 512, n_out: int = 88,
                  window: int = 5, n_bins: int = 229, extra_conv: bool = False,
                  name: str = "CONVNET") -> ModelGraph:
    """Context-window framewise ConvNet family.

    ``extra_conv`` appends the 1x3 conv / pool / dropout stage of the small
    variant before the dense part.
    """
    spec = dict(kind="frame_convnet", channels=list(channels), dense=dense, n_out=n_out,
                window=window, n_bins=n_bins, extra_conv=extra_conv, name=name)
    g = ModelGraph(name, (1, window, n_bins), spec)
    c1, c2, c3 = channels
    _conv_block(g, 1, c1, 3, "same")
    _conv_block(g, c1, c2, 3, "valid")
    g.add(MaxPool((1, 2)))
    g.add(Dropout(0.25))
    _conv_block(g, c2, c3, 3, "valid")
    g.add(MaxPool((1, 2)))
    last = g.add(Dropout(0.25))
    if extra_conv:
        _conv_block(g, c3, c3, (1, 3), "valid")
        g.add(MaxPool((1, 2)))
        last = g.add(Dropout(0.25))
    flat = 1
    for d in g.shape_of(last):
        flat *= d
    g.add(Dense(flat, dense))
    g.add(BatchNorm(dense))
    g.add(Activation("relu"))
    g.add(Dropout(0.5))
    g.add(Dense(dense, n_out, bias=True, activation="sigmoid"))
    return g


def aunet(n_time: int = 256, n_freq: int = 256, base: int = 32, n_out: int = 88,
          name: str = "AUNET") -> ModelGraph:
    """UNet with nearest-neighbour upscaling and a wide final frequency kernel.

    The penultimate conv halves frequency with stride (1, 2); the final
    sigmoid conv is ``1 x (n_freq / 2 - n_out + 1)`` valid, leaving ``n_out``
    bins per frame.
    """
    spec = dict(kind="aunet", n_time=n_time, n_freq=n_freq, base=base, n_out=n_out, name=name)
    g = ModelGraph(name, (1, n_time, n_freq), spec)
    widths = [base, base, 2 * base, 2 * base]
    skips = []
    ch = 1
    for i, w in enumerate(widths):
        _conv_block(g, ch, w, act="elu")
        skips.append(_conv_block(g, w, w, act="elu"))
        g.add(MaxPool((2, 2)))
        ch = w
    _conv_block(g, ch, 4 * base, act="elu")
    _conv_block(g, 4 * base, 4 * base, act="elu")
    ch = 4 * base
    for skip, w in zip(reversed(skips), (4 * base, 2 * base, base, base)):
        up = g.add(Upscale((2, 2)))
        g.add(Concat(), (up, skip))
        _conv_block(g, ch + g.shape_of(skip)[0], w, act="elu")
        if skip is not skips[0]:
            _conv_block(g, w, w, act="elu")
        ch = w
    _conv_block(g, base, base, act="elu", stride=(1, 2))
    kw = n_freq // 2 - n_out + 1
    g.add(Conv2d(base, 1, (1, kw), padding="valid", bias=True, activation="sigmoid"))
    return g


def build_architecture(name: Architecture | str, seed: int = 0) -> ModelGraph:
    name = Architecture(name)
    if name is Architecture.CONVNET:
        g = frame_convnet()
    elif name is Architecture.SMALLCONVNET:
        g = frame_convnet((8, 8, 8), dense=16, n_out=23, extra_conv=True, name="SMALLCONVNET")
    else:
        g = aunet()
    return g.init(seed)


def from_spec(spec: dict, seed: int = 0) -> ModelGraph:
    """Rebuild a graph from its ``ModelGraph.spec`` record."""
    kw = {k: v for k, v in spec.items() if k != "kind"}
    if spec.get("kind") == "frame_convnet":
        kw["channels"] = tuple(kw["channels"])
        return frame_convnet(**kw).init(seed)
    if spec.get("kind") == "aunet":
        return aunet(**kw).init(seed)
    raise ValueError(f"unknown architecture spec {spec!r}")


# Layer tables as published: (layer type, output dimensions, parameter count).
PAPER_TABLES: dict[Architecture, list[tuple[str, str, int]]] = {
    Architecture.CONVNET: [
        ("Input", "1x5x229", 0),
        ("Conv (Id)", "32x5x229@3x3", 288),
        ("BatchNorm", "32x5x229", 128),
        ("Relu", "32x5x229", 0),
        ("Conv (Id)", "32x3x227@3x3", 9216),
        ("BatchNorm", "32x3x227", 128),
        ("Relu", "32x3x227", 0),
        ("MaxPool", "32x3x113@1x2", 0),
        ("Dropout, p=0.25", "32x3x113", 0),
        ("Conv (Id)", "64x1x111@3x3", 18432),
        ("BatchNorm", "64x1x111", 256),
        ("Relu", "64x1x111", 0),
        ("MaxPool", "64x1x55@1x2", 0),
        ("Dropout, p=0.25", "64x1x55", 0),
        ("Dense (Id)", "512", 1802240),
        ("BatchNorm", "512", 2048),
        ("Relu", "512", 0),
        ("Dropout, p=0.5", "512", 0),
        ("Dense (Sigmoid)", "88", 45144),
    ],
    Architecture.SMALLCONVNET: [
        ("Input", "1x5x229", 0),
        ("Conv (Id)", "8x5x229@3x3", 72),
        ("BatchNorm", "8x5x229", 32),
        ("Relu", "8x5x229", 0),
        ("Conv (Id)", "8x3x227@3x3", 576),
        ("BatchNorm", "8x3x227", 32),
        ("Relu", "8x3x227", 0),
        ("MaxPool", "8x3x113@1x2", 0),
        ("Dropout, p=0.25", "8x3x113", 0),
        ("Conv (Id)", "8x1x111@3x3", 576),
        ("BatchNorm", "8x1x111", 32),
        ("Relu", "8x1x111", 0),
        ("MaxPool", "8x1x55@1x2", 0),
        ("Dropout, p=0.25", "8x1x55", 0),
        ("Conv (Id)", "8x1x53@1x3", 192),
        ("BatchNorm", "8x1x53", 32),
        ("Relu", "8x1x53", 0),
        ("MaxPool", "8x1x26@1x2", 0),
        ("Dropout, p=0.25", "8x1x26", 0),
        ("Dense (Id)", "16", 3328),
        ("BatchNorm", "16", 64),
        ("Relu", "16", 0),
        ("Dropout, p=0.5", "16", 0),
        ("Dense (Sigmoid)", "23", 391),
    ],
    Architecture.AUNET: [
        ("Input", "1x256x256", 0),
        ("Conv (Id)", "32x256x256@3x3", 288),
        ("BatchNorm", "32x256x256", 128),
        ("Elu", "32x256x256", 0),
        ("Conv (Id)", "32x256x256@3x3", 9216),
        ("BatchNorm", "32x256x256", 128),
        ("Elu", "32x256x256", 0),
        ("MaxPool", "32x128x128@2x2", 0),
        ("Conv (Id)", "32x128x128@3x3", 9216),
        ("BatchNorm", "32x128x128", 128),
        ("Elu", "32x128x128", 0),
        ("Conv (Id)", "32x128x128@3x3", 9216),
        ("BatchNorm", "32x128x128", 128),
        ("Elu", "32x128x128", 0),
        ("MaxPool", "32x64x64@2x2", 0),
        ("Conv (Id)", "64x64x64@3x3", 18432),
        ("BatchNorm", "64x64x64", 256),
        ("Elu", "64x64x64", 0),
        ("Conv (Id)", "64x64x64@3x3", 36864),
        ("BatchNorm", "64x64x64", 256),
        ("Elu", "64x64x64", 0),
        ("MaxPool", "64x32x32@2x2", 0),
        ("Conv (Id)", "64x32x32@3x3", 36864),
        ("BatchNorm", "64x32x32", 256),
        ("Elu", "64x32x32", 0),
        ("Conv (Id)", "64x32x32@3x3", 36864),
        ("BatchNorm", "64x32x32", 256),
        ("Elu", "64x32x32", 0),
        ("MaxPool", "64x16x16@2x2", 0),
        ("Conv (Id)", "128x16x16@3x3", 73728),
        ("BatchNorm", "128x16x16", 512),
        ("Elu", "128x16x16", 0),
        ("Conv (Id)", "128x16x16@3x3", 147456),
        ("BatchNorm", "128x16x16", 512),
        ("Elu", "128x16x16", 0),
        ("Upscale", "128x32x32", 0),
        ("Concat", "192x32x32", 0),
        ("Conv (Id)", "128x32x32@3x3", 221184),
        ("BatchNorm", "128x32x32", 512),
        ("Elu", "128x32x32", 0),
        ("Conv (Id)", "128x32x32@3x3", 147456),
        ("BatchNorm", "128x32x32", 512),
        ("Elu", "128x32x32", 0),
        ("Upscale", "128x64x64", 0),
        ("Concat", "192x64x64", 0),
        ("Conv (Id)", "64x64x64@3x3", 110592),
        ("BatchNorm", "64x64x64", 256),
        ("Elu", "64x64x64", 0),
        ("Conv (Id)", "64x64x64@3x3", 36864),
        ("BatchNorm", "64x64x64", 256),
        ("Elu", "64x64x64", 0),
        ("Upscale", "64x128x128", 0),
        ("Concat", "96x128x128", 0),
        ("Conv (Id)", "32x128x128@3x3", 27648),
        ("BatchNorm", "32x128x128", 128),
        ("Elu", "32x128x128", 0),
        ("Conv (Id)", "32x128x128@3x3", 9216),
        ("BatchNorm", "32x128x128", 128),
        ("Elu", "32x128x128", 0),
        ("Upscale", "32x256x256", 0),
        ("Concat", "64x256x256", 0),
        ("Conv (Id)", "32x256x256@3x3", 18432),
        ("BatchNorm", "32x256x256", 128),
        ("Elu", "32x256x256", 0),
        ("Conv (Id)", "32x256x128@3x3", 9216),
        ("BatchNorm", "32x256x128", 128),
        ("Elu", "32x256x128", 0),
        ("Conv (Sigmoid)", "1x256x88@1x41", 1313),
    ],
}

PAPER_TOTALS = {
    Architecture.CONVNET: 1877880,
    Architecture.SMALLCONVNET: 5327,
    Architecture.AUNET: 964673,
}
