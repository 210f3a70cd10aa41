"""Network topology description, shape inference, and the forward/backward driver.

A NetworkSpec is an ordered list of LayerSpecs plus the input shape. The
textual format is one layer per line, ``kind key=value ...``, with ``#``
comments; the ``caffenet`` and ``tiny`` presets are built in.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ShapeError, SpecError, StaleCacheError
from . import layers as L

KINDS = ("conv", "relu", "maxpool", "lrn", "dropout", "fc", "crop")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out_channels: int = 0       # conv
    kernel: int = 0             # conv / maxpool
    stride: int = 1             # conv / maxpool
    pad: int = 0                # conv
    groups: int = 1             # conv
    n: int = 5                  # lrn window
    alpha: float = 1e-4         # lrn
    beta: float = 0.75          # lrn
    k: float = 1.0              # lrn
    keep_prob: float = 1.0      # dropout
    out_features: int = 0       # fc
    size: int = 0               # crop
    mode: str = "auto"          # crop: auto | train-random | eval-center


def conv(out_channels, kernel, stride=1, pad=0, groups=1) -> LayerSpec:
    return LayerSpec("conv", out_channels=out_channels, kernel=kernel,
                     stride=stride, pad=pad, groups=groups)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def maxpool(kernel, stride) -> LayerSpec:
    return LayerSpec("maxpool", kernel=kernel, stride=stride)


def lrn(n=5, alpha=1e-4, beta=0.75, k=1.0) -> LayerSpec:
    return LayerSpec("lrn", n=n, alpha=alpha, beta=beta, k=k)


def dropout(keep_prob) -> LayerSpec:
    return LayerSpec("dropout", keep_prob=keep_prob)


def fc(out_features) -> LayerSpec:
    return LayerSpec("fc", out_features=out_features)


def crop(size, mode="auto") -> LayerSpec:
    return LayerSpec("crop", size=size, mode=mode)


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple[int, int, int]  # (C, H, W)
    layers: tuple[LayerSpec, ...]
    num_classes: int

    def __post_init__(self):
        if not self.layers or self.layers[-1].kind != "fc":
            raise SpecError("final layer must be fc")
        if self.layers[-1].out_features != self.num_classes:
            raise SpecError("final fc out_features must equal num_classes")


def infer_shapes(spec: NetworkSpec) -> list[tuple[int, ...]]:
    """Per-layer output shapes (without batch dimension)."""
    shape: tuple[int, ...] = spec.input_shape
    out = []
    for i, ls in enumerate(spec.layers):
        if ls.kind == "conv":
            if len(shape) != 3:
                raise ShapeError(f"layer {i}: conv needs a CHW input")
            c, h, w = shape
            if c % ls.groups or ls.out_channels % ls.groups:
                raise ShapeError(f"layer {i}: groups {ls.groups} must divide channels")
            ho = L.conv_out_size(h, ls.kernel, ls.stride, ls.pad)
            wo = L.conv_out_size(w, ls.kernel, ls.stride, ls.pad)
            if ho <= 0 or wo <= 0:
                raise ShapeError(f"layer {i}: conv output {ho}x{wo}")
            shape = (ls.out_channels, ho, wo)
        elif ls.kind == "maxpool":
            c, h, w = shape
            ho = L.conv_out_size(h, ls.kernel, ls.stride, 0)
            wo = L.conv_out_size(w, ls.kernel, ls.stride, 0)
            if ho <= 0 or wo <= 0:
                raise ShapeError(f"layer {i}: maxpool output {ho}x{wo}")
            shape = (c, ho, wo)
        elif ls.kind == "crop":
            if len(shape) != 3:
                raise ShapeError(f"layer {i}: crop needs a CHW input")
            c, h, w = shape
            if ls.size > h or ls.size > w:
                raise ShapeError(f"layer {i}: crop {ls.size} exceeds {h}x{w}")
            shape = (c, ls.size, ls.size)
        elif ls.kind == "fc":
            shape = (ls.out_features,)
        elif ls.kind in ("relu", "lrn", "dropout"):
            if ls.kind == "lrn" and len(shape) != 3:
                raise ShapeError(f"layer {i}: lrn needs a CHW input")
        else:
            raise SpecError(f"layer {i}: unknown kind {ls.kind!r}")
        out.append(shape)
    return out


def parameter_shapes(spec: NetworkSpec) -> list[dict[str, tuple[int, ...]]]:
    """Weight/bias shapes per layer; empty dict for parameter-free layers."""
    shapes = []
    cur: tuple[int, ...] = spec.input_shape
    for ls in spec.layers:
        if ls.kind == "conv":
            c = cur[0]
            shapes.append({
                "w": (ls.out_channels, c // ls.groups, ls.kernel, ls.kernel),
                "b": (ls.out_channels,),
            })
        elif ls.kind == "fc":
            shapes.append({"w": (ls.out_features, int(np.prod(cur))), "b": (ls.out_features,)})
        else:
            shapes.append({})
        cur = _advance(cur, ls)
    return shapes


def _advance(shape, ls):
    return infer_shapes(NetworkSpec(shape, (ls, fc(1)), 1))[0] if ls.kind != "fc" else (ls.out_features,)


@dataclass
class Network:
    spec: NetworkSpec
    params: list[dict[str, np.ndarray]]
    new_layer: list[bool] = field(default_factory=list)

    def __post_init__(self):
        if not self.new_layer:
            self.new_layer = [False] * len(self.spec.layers)
        expect = parameter_shapes(self.spec)
        for i, (got, want) in enumerate(zip(self.params, expect)):
            got_shapes = {k: v.shape for k, v in got.items()}
            if got_shapes != want:
                raise ShapeError(f"layer {i}: parameters {got_shapes} != expected {want}")

    @property
    def dtype(self):
        for p in self.params:
            if "w" in p:
                return p["w"].dtype
        return np.float32

    def astype(self, dtype) -> "Network":
        params = [{k: v.astype(dtype) for k, v in p.items()} for p in self.params]
        return Network(self.spec, params, list(self.new_layer))

    def copy(self) -> "Network":
        return self.astype(self.dtype)


@dataclass
class ForwardCache:
    net_token: int
    mode: str
    layer_caches: list


def init_weights(spec: NetworkSpec, sigma: float = 0.01, seed: int = 0) -> Network:
    """Gaussian N(0, sigma^2) weights, zero biases, deterministic per seed."""
    rng = np.random.default_rng(seed)
    params = []
    for shapes in parameter_shapes(spec):
        p = {}
        if shapes:
            p["w"] = (rng.standard_normal(shapes["w"]) * sigma).astype(np.float32)
            p["b"] = np.zeros(shapes["b"], dtype=np.float32)
        params.append(p)
    return Network(spec, params)


def replace_final_layer(net: Network, num_classes: int, seed: int = 0, sigma: float = 0.01) -> Network:
    """Keep all parameters but re-initialize the last fc for num_classes outputs.

    The new layer is flagged so training can apply a learning-rate multiplier.
    """
    if net.spec.layers[-1].kind != "fc":
        raise SpecError("last layer is not fc")
    new_spec = NetworkSpec(
        net.spec.input_shape,
        net.spec.layers[:-1] + (fc(num_classes),),
        num_classes,
    )
    rng = np.random.default_rng(seed)
    in_features = parameter_shapes(new_spec)[-1]["w"][1]
    params = [{k: v.copy() for k, v in p.items()} for p in net.params[:-1]]
    params.append({
        "w": (rng.standard_normal((num_classes, in_features)) * sigma).astype(np.float32),
        "b": np.zeros(num_classes, dtype=np.float32),
    })
    flags = [False] * (len(new_spec.layers) - 1) + [True]
    return Network(new_spec, params, flags)


def network_forward(net: Network, x: np.ndarray, mode: str = "eval", rng=None):
    """Apply layers in order. mode "train" enables dropout and random crops."""
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "train" and rng is None:
        raise ValueError("train mode requires an rng")
    if x.ndim != 4 or x.shape[1:] != net.spec.input_shape:
        raise ShapeError(f"input {x.shape} does not match spec {net.spec.input_shape}")
    caches = []
    for ls, p in zip(net.spec.layers, net.params):
        if ls.kind == "conv":
            x, c = L.conv_forward(x, p["w"], p["b"], ls.stride, ls.pad, ls.groups)
        elif ls.kind == "relu":
            x, c = L.relu_forward(x)
        elif ls.kind == "maxpool":
            x, c = L.maxpool_forward(x, ls.kernel, ls.stride)
        elif ls.kind == "lrn":
            x, c = L.lrn_forward(x, ls.n, ls.alpha, ls.beta, ls.k)
        elif ls.kind == "dropout":
            x, c = L.dropout_forward(x, ls.keep_prob, mode, rng)
        elif ls.kind == "fc":
            x, c = L.fc_forward(x, p["w"], p["b"])
        elif ls.kind == "crop":
            crop_mode = ls.mode
            if crop_mode == "auto":
                crop_mode = "train-random" if mode == "train" else "eval-center"
            x, c = L.crop_forward(x, ls.size, crop_mode, rng)
        caches.append(c)
    return x, ForwardCache(id(net), mode, caches)


def network_backward(net: Network, cache: ForwardCache, grad_logits: np.ndarray):
    """Exact reverse-mode gradients; returns (grad_input, per-layer grads)."""
    if cache.net_token != id(net):
        raise StaleCacheError("forward cache does not belong to this network")
    grads: list[dict[str, np.ndarray]] = [dict() for _ in net.spec.layers]
    dy = grad_logits
    for i in range(len(net.spec.layers) - 1, -1, -1):
        ls = net.spec.layers[i]
        c = cache.layer_caches[i]
        if ls.kind == "conv":
            dy, dw, db = L.conv_backward(c, dy)
            grads[i] = {"w": dw, "b": db}
        elif ls.kind == "relu":
            dy = L.relu_backward(c, dy)
        elif ls.kind == "maxpool":
            dy = L.maxpool_backward(c, dy)
        elif ls.kind == "lrn":
            dy = L.lrn_backward(c, dy)
        elif ls.kind == "dropout":
            dy = L.dropout_backward(c, dy)
        elif ls.kind == "fc":
            dy, dw, db = L.fc_backward(c, dy)
            grads[i] = {"w": dw, "b": db}
        elif ls.kind == "crop":
            dy = L.crop_backward(c, dy)
    return dy, grads


def extract_features(net: Network, x: np.ndarray) -> np.ndarray:
    """Activations after the penultimate fc layer (and its rectifier), eval mode."""
    fc_idx = [i for i, ls in enumerate(net.spec.layers) if ls.kind == "fc"]
    if len(fc_idx) < 2:
        raise SpecError("feature extraction needs at least two fc layers")
    stop = fc_idx[-2]
    # include an immediately following relu if present
    if stop + 1 < len(net.spec.layers) and net.spec.layers[stop + 1].kind == "relu":
        stop += 1
    for i, (ls, p) in enumerate(zip(net.spec.layers, net.params)):
        if ls.kind == "conv":
            x, _ = L.conv_forward(x, p["w"], p["b"], ls.stride, ls.pad, ls.groups)
        elif ls.kind == "relu":
            x, _ = L.relu_forward(x)
        elif ls.kind == "maxpool":
            x, _ = L.maxpool_forward(x, ls.kernel, ls.stride)
        elif ls.kind == "lrn":
            x, _ = L.lrn_forward(x, ls.n, ls.alpha, ls.beta, ls.k)
        elif ls.kind == "dropout":
            pass  # identity in eval mode
        elif ls.kind == "fc":
            x, _ = L.fc_forward(x, p["w"], p["b"])
        elif ls.kind == "crop":
            x, _ = L.crop_forward(x, ls.size, "eval-center", None)
        if i == stop:
            return x.reshape(x.shape[0], -1)
    raise SpecError("unreachable")  # pragma: no cover


# --- presets -----------------------------------------------------------------

def caffenet(num_classes: int = 31, in_channels: int = 3,
             with_lrn: bool = True, with_dropout: bool = True) -> NetworkSpec:
    """AlexNet-family topology: five conv, three max-pool, three fc layers."""
    ls: list[LayerSpec] = [crop(227)]
    ls += [conv(96, 11, stride=4), relu()]
    if with_lrn:
        ls.append(lrn())
    ls += [maxpool(3, 2)]
    ls += [conv(256, 5, pad=2, groups=2), relu()]
    if with_lrn:
        ls.append(lrn())
    ls += [maxpool(3, 2)]
    ls += [conv(384, 3, pad=1), relu()]
    ls += [conv(384, 3, pad=1, groups=2), relu()]
    ls += [conv(256, 3, pad=1, groups=2), relu()]
    ls += [maxpool(3, 2)]
    ls += [fc(4096), relu()]
    if with_dropout:
        ls.append(dropout(0.5))
    ls += [fc(4096), relu()]
    if with_dropout:
        ls.append(dropout(0.5))
    ls += [fc(num_classes)]
    return NetworkSpec((in_channels, 256, 256), tuple(ls), num_classes)


def tiny(num_classes: int = 31, input_hw: int = 256) -> NetworkSpec:
    """Small single-channel topology for desk-scale training and checking.

    Default input is the 256x256 preprocessing canvas with a 224 crop; the
    input size is adjustable so gradient checks can run on small images.
    """
    crop_size = input_hw - 32 if input_hw >= 64 else max(8, input_hw - 8)
    ls = (
        crop(crop_size),
        conv(8, 8, stride=8), relu(),
        maxpool(2, 2),
        conv(16, 3, pad=1), relu(),
        maxpool(2, 2),
        fc(64), relu(),
        fc(num_classes),
    )
    return NetworkSpec((1, input_hw, input_hw), ls, num_classes)


PRESETS = {"caffenet": caffenet, "tiny": tiny}


# --- textual spec format -----------------------------------------------------

_LAYER_FIELDS = {
    "conv": ("out_channels", "kernel", "stride", "pad", "groups"),
    "relu": (),
    "maxpool": ("kernel", "stride"),
    "lrn": ("n", "alpha", "beta", "k"),
    "dropout": ("keep_prob",),
    "fc": ("out_features",),
    "crop": ("size", "mode"),
}

_KEY_ALIASES = {"out": None}  # "out" maps to out_channels (conv) or out_features (fc)


def dump_spec(spec: NetworkSpec) -> str:
    c, h, w = spec.input_shape
    lines = [f"input c={c} h={h} w={w}"]
    for ls in spec.layers:
        parts = [ls.kind]
        for name in _LAYER_FIELDS[ls.kind]:
            value = getattr(ls, name)
            key = "out" if name in ("out_channels", "out_features") else name
            if isinstance(value, float):
                value = repr(value)
            parts.append(f"{key}={value}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def parse_spec(text: str) -> NetworkSpec:
    input_shape = None
    specs: list[LayerSpec] = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind, kvs = parts[0], parts[1:]
        args = {}
        for kv in kvs:
            if "=" not in kv:
                raise SpecError(f"malformed token {kv!r} in line {raw!r}")
            key, value = kv.split("=", 1)
            args[key] = value
        if kind == "input":
            input_shape = (int(args["c"]), int(args["h"]), int(args["w"]))
            continue
        if kind not in _LAYER_FIELDS:
            raise SpecError(f"unknown layer kind {kind!r}")
        fields = {}
        for key, value in args.items():
            name = key
            if key == "out":
                name = "out_channels" if kind == "conv" else "out_features"
            if name not in _LAYER_FIELDS[kind]:
                raise SpecError(f"layer {kind}: unknown key {key!r}")
            if name == "mode":
                fields[name] = value
            elif name in ("alpha", "beta", "k", "keep_prob"):
                fields[name] = float(value)
            else:
                fields[name] = int(value)
        specs.append(LayerSpec(kind, **fields))
    if input_shape is None:
        raise SpecError("spec is missing an input line")
    if not specs or specs[-1].kind != "fc":
        raise SpecError("spec must end with an fc layer")
    return NetworkSpec(input_shape, tuple(specs), specs[-1].out_features)
