"""Small dense-tensor policy/value networks with hand-written backpropagation.

A network is a chain of trunk layers (``conv``, ``dense``, ``lstm``) that
ends in two heads reading the same trunk output: a softmax policy head and a
scalar value head. All parameters live in one flat float64 vector; each layer
holds views into it, so optimizers and snapshots work on the vector directly.

Inputs are ``(C, H, W)`` observations or ``(T, C, H, W)`` sequences. A
sequence is processed as consecutive time steps: feed-forward layers batch
over ``T``; the recurrent layer unrolls over it.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"OLNN"
FORMAT_VERSION = 1


class ShapeMismatch(ValueError):
    pass


class NonFiniteActivation(FloatingPointError):
    pass


class StaleTrace(RuntimeError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | dense | lstm | policy | value
    units: int = 1  # output channels for conv, action count for policy
    kernel: int = 1
    stride: int = 1
    activation: str | None = None

    def __post_init__(self):
        if self.kind not in ("conv", "dense", "lstm", "policy", "value"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.units < 1 or self.kernel < 1 or self.stride < 1:
            raise ValueError(f"units, kernel and stride must be >= 1: {self}")
        if self.activation not in (None, "relu"):
            raise ValueError(f"unsupported activation {self.activation!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "units": self.units, "kernel": self.kernel,
                "stride": self.stride, "activation": self.activation}


def Conv(out_channels: int, kernel: int, stride: int = 1, activation: str | None = "relu") -> LayerSpec:
    return LayerSpec("conv", out_channels, kernel, stride, activation)


def Dense(units: int, activation: str | None = "relu") -> LayerSpec:
    return LayerSpec("dense", units, activation=activation)


def Recurrent(units: int) -> LayerSpec:
    return LayerSpec("lstm", units)


def PolicyHead(n_actions: int = 4) -> LayerSpec:
    return LayerSpec("policy", n_actions)


def ValueHead() -> LayerSpec:
    return LayerSpec("value", 1)


def global_view_specs(lstm: int = 0, channels: int = 16, dense: int = 128, n_actions: int = 4) -> list[LayerSpec]:
    specs = [Conv(channels, 2, 2), Conv(channels, 2, 1), Dense(dense)]
    if lstm:
        specs.append(Recurrent(lstm))
    return specs + [PolicyHead(n_actions), ValueHead()]


def local_view_specs(lstm: int = 0, channels: int = 16, dense: int = 128, n_actions: int = 4) -> list[LayerSpec]:
    specs = [Conv(channels, 2, 1), Dense(dense)]
    if lstm:
        specs.append(Recurrent(lstm))
    return specs + [PolicyHead(n_actions), ValueHead()]


def _layer_shapes(specs: list[LayerSpec], input_shape: tuple[int, ...]) -> list[dict[str, tuple[int, ...]]]:
    """Parameter shapes per layer; also validates the chain."""
    if len(specs) < 2 or specs[-2].kind != "policy" or specs[-1].kind != "value":
        raise ShapeMismatch("spec chain must end with PolicyHead followed by ValueHead")
    if any(s.kind in ("policy", "value") for s in specs[:-2]):
        raise ShapeMismatch("heads may only appear at the end of the chain")
    if len(input_shape) != 3:
        raise ShapeMismatch(f"input shape must be (C, H, W), got {input_shape}")
    c, h, w = input_shape
    spatial = True
    flat = c * h * w
    shapes = []
    for s in specs[:-2]:
        if s.kind == "conv":
            if not spatial:
                raise ShapeMismatch("conv layers must precede dense/lstm layers")
            h, w = (h - s.kernel) // s.stride + 1, (w - s.kernel) // s.stride + 1
            if h < 1 or w < 1:
                raise ShapeMismatch(f"conv {s} does not fit input")
            shapes.append({"W": (s.kernel * s.kernel * c, s.units), "b": (s.units,)})
            c = s.units
            flat = c * h * w
        elif s.kind == "dense":
            spatial = False
            shapes.append({"W": (flat, s.units), "b": (s.units,)})
            flat = s.units
        else:
            spatial = False
            u = s.units
            shapes.append({"Wx": (flat, 4 * u), "Wh": (u, 4 * u), "b": (4 * u,)})
            flat = u
    n_actions = specs[-2].units
    shapes.append({"W": (flat, n_actions), "b": (n_actions,)})
    shapes.append({"W": (flat, 1), "b": (1,)})
    return shapes


@dataclass
class NetworkParams:
    specs: list[LayerSpec]
    input_shape: tuple[int, int, int]
    flat: np.ndarray
    layers: list[dict[str, np.ndarray]] = field(default_factory=list, repr=False)
    version: int = 0

    def __post_init__(self):
        shapes = _layer_shapes(self.specs, self.input_shape)
        total = sum(int(np.prod(s)) for layer in shapes for s in layer.values())
        if self.flat.shape != (total,):
            raise ShapeMismatch(f"expected {total} parameters, got {self.flat.shape}")
        self.layers = []
        offset = 0
        for layer in shapes:
            views = {}
            for name, shape in layer.items():
                n = int(np.prod(shape))
                views[name] = self.flat[offset:offset + n].reshape(shape)
                offset += n
            self.layers.append(views)

    @property
    def recurrent_units(self) -> int:
        return next((s.units for s in self.specs if s.kind == "lstm"), 0)

    @property
    def n_actions(self) -> int:
        return self.specs[-2].units

    def copy(self) -> "NetworkParams":
        return NetworkParams(list(self.specs), self.input_shape, self.flat.copy())

    def zero_state(self):
        u = self.recurrent_units
        return (np.zeros(u), np.zeros(u)) if u else None


def build_network(specs: list[LayerSpec], input_shape: tuple[int, int, int],
                  rng: np.random.Generator) -> NetworkParams:
    """Weights uniform in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``, biases zero."""
    input_shape = tuple(int(d) for d in input_shape)
    shapes = _layer_shapes(specs, input_shape)
    chunks = []
    for layer in shapes:
        for name, shape in layer.items():
            if name == "b":
                chunks.append(np.zeros(int(np.prod(shape))))
                continue
            if name in ("Wx", "Wh"):
                # LSTM gates see the input and the previous hidden state together.
                fan_in = layer["Wx"][0] + layer["Wh"][0]
            else:
                fan_in = shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            chunks.append(rng.uniform(-bound, bound, size=int(np.prod(shape))))
    return NetworkParams(list(specs), input_shape, np.concatenate(chunks))


@dataclass
class ForwardTrace:
    caches: list
    logits: np.ndarray  # (T, A)
    policy: np.ndarray  # (T, A)
    value: np.ndarray  # (T,)
    state: tuple | None  # recurrent (h, c) after the last step
    params_id: int
    params_version: int


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _conv_cols(x: np.ndarray, k: int, s: int, ho: int, wo: int) -> np.ndarray:
    # x is NHWC; columns are ordered (kernel row, kernel col, channel).
    t, _, _, c = x.shape
    patches = [x[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :]
               for i in range(k) for j in range(k)]
    return np.stack(patches, axis=3).reshape(t * ho * wo, k * k * c)


def forward(params: NetworkParams, observation: np.ndarray, state=None) -> ForwardTrace:
    """Run the network over one observation or a sequence of them.

    ``state`` is the recurrent ``(h, c)`` carried in from the previous step
    (``None`` means zeros). The trace keeps what ``backward`` needs.
    """
    dt = params.flat.dtype
    x = np.asarray(observation, dtype=dt)
    if x.ndim == 3:
        x = x[None]
    if x.shape[1:] != params.input_shape:
        raise ShapeMismatch(f"observation shape {x.shape[1:]} != network input {params.input_shape}")
    t = x.shape[0]
    a = x.transpose(0, 2, 3, 1)  # NHWC
    caches = []
    new_state = None
    for spec, p in zip(params.specs[:-2], params.layers[:-2]):
        if spec.kind == "conv":
            _, h, w, c = a.shape
            k, s = spec.kernel, spec.stride
            ho, wo = (h - k) // s + 1, (w - k) // s + 1
            cols = _conv_cols(a, k, s, ho, wo)
            z = (cols @ p["W"] + p["b"]).reshape(t, ho, wo, spec.units)
            caches.append((cols, z, a.shape))
            a = np.maximum(z, 0.0) if spec.activation == "relu" else z
        elif spec.kind == "dense":
            xin = a.reshape(t, -1)
            z = xin @ p["W"] + p["b"]
            caches.append((xin, z, a.shape))
            a = np.maximum(z, 0.0) if spec.activation == "relu" else z
        else:
            xin = a.reshape(t, -1)
            u = spec.units
            h_prev, c_prev = state if state is not None else (np.zeros(u, dt), np.zeros(u, dt))
            xw = xin @ p["Wx"] + p["b"]
            hs = np.empty((t + 1, u), dt)
            cs = np.empty((t + 1, u), dt)
            gates = np.empty((t, 4 * u), dt)
            tanh_c = np.empty((t, u), dt)
            hs[0], cs[0] = h_prev, c_prev
            wh = p["Wh"]
            for i in range(t):
                g = xw[i] + hs[i] @ wh
                g[:3 * u] = _sigmoid(g[:3 * u])
                g[3 * u:] = np.tanh(g[3 * u:])
                cs[i + 1] = g[u:2 * u] * cs[i] + g[:u] * g[3 * u:]
                tanh_c[i] = np.tanh(cs[i + 1])
                hs[i + 1] = g[2 * u:3 * u] * tanh_c[i]
                gates[i] = g
            caches.append((xin, hs, cs, gates, tanh_c, a.shape))
            new_state = (hs[t].copy(), cs[t].copy())
            a = hs[1:]
    feat = a.reshape(t, -1)
    pw, vw = params.layers[-2], params.layers[-1]
    logits = feat @ pw["W"] + pw["b"]
    value = (feat @ vw["W"] + vw["b"])[:, 0]
    if not (np.all(np.isfinite(logits)) and np.all(np.isfinite(value))):
        raise NonFiniteActivation("non-finite network output")
    caches.append(feat)
    return ForwardTrace(caches, logits, _softmax(logits), value, new_state, id(params), params.version)


def backward(trace: ForwardTrace, params: NetworkParams, dlogits: np.ndarray,
             dvalue: np.ndarray) -> np.ndarray:
    """Gradient of a scalar loss w.r.t. every parameter, as a flat vector.

    ``dlogits`` (T, A) and ``dvalue`` (T,) are the loss gradients at the two
    heads. Backpropagation through time stops at the start of the sequence.
    """
    if trace.params_id != id(params) or trace.params_version != params.version:
        raise StaleTrace("trace was produced with different or since-modified parameters")
    grad = np.zeros_like(params.flat)
    gl = NetworkParams(params.specs, params.input_shape, grad).layers
    dlogits = np.asarray(dlogits, dtype=np.float64).reshape(trace.logits.shape)
    dvalue = np.asarray(dvalue, dtype=np.float64).reshape(trace.value.shape)

    feat = trace.caches[-1]
    pw, vw = params.layers[-2], params.layers[-1]
    gl[-2]["W"][...] = feat.T @ dlogits
    gl[-2]["b"][...] = dlogits.sum(axis=0)
    gl[-1]["W"][...] = feat.T @ dvalue[:, None]
    gl[-1]["b"][...] = dvalue.sum()
    da = dlogits @ pw["W"].T + dvalue[:, None] @ vw["W"].T

    for spec, p, g, cache in reversed(list(zip(params.specs[:-2], params.layers[:-2], gl[:-2], trace.caches[:-1]))):
        if spec.kind == "conv":
            cols, z, in_shape = cache
            t, ho, wo, f = z.shape
            dz = da.reshape(z.shape)
            if spec.activation == "relu":
                dz = dz * (z > 0)
            dz2 = dz.reshape(-1, f)
            g["W"][...] = cols.T @ dz2
            g["b"][...] = dz2.sum(axis=0)
            k, s = spec.kernel, spec.stride
            c = in_shape[3]
            dcols = (dz2 @ p["W"].T).reshape(t, ho, wo, k * k, c)
            dx = np.zeros(in_shape)
            for idx in range(k * k):
                i, j = divmod(idx, k)
                dx[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :] += dcols[:, :, :, idx, :]
            da = dx
        elif spec.kind == "dense":
            xin, z, in_shape = cache
            dz = da.reshape(z.shape)
            if spec.activation == "relu":
                dz = dz * (z > 0)
            g["W"][...] = xin.T @ dz
            g["b"][...] = dz.sum(axis=0)
            da = (dz @ p["W"].T).reshape(in_shape)
        else:
            xin, hs, cs, gates, tanh_c, in_shape = cache
            t = xin.shape[0]
            u = spec.units
            dh_all = da.reshape(t, u)
            dgates = np.empty((t, 4 * u))
            dh_next = np.zeros(u)
            dc_next = np.zeros(u)
            wh_t = p["Wh"].T
            for i in range(t - 1, -1, -1):
                gi, gf, go, gg = gates[i, :u], gates[i, u:2 * u], gates[i, 2 * u:3 * u], gates[i, 3 * u:]
                dh = dh_all[i] + dh_next
                dc = dh * go * (1.0 - tanh_c[i] ** 2) + dc_next
                d = dgates[i]
                d[:u] = dc * gg * gi * (1.0 - gi)
                d[u:2 * u] = dc * cs[i] * gf * (1.0 - gf)
                d[2 * u:3 * u] = dh * tanh_c[i] * go * (1.0 - go)
                d[3 * u:] = dc * gi * (1.0 - gg ** 2)
                dc_next = dc * gf
                dh_next = d @ wh_t
            g["Wx"][...] = xin.T @ dgates
            g["Wh"][...] = hs[:-1].T @ dgates
            g["b"][...] = dgates.sum(axis=0)
            da = (dgates @ p["Wx"].T).reshape(in_shape)
    return grad


# -- finite-difference verification -------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    per_layer: dict[str, float]
    coordinates: int


def _relu_signature(trace: ForwardTrace, specs: list[LayerSpec]) -> list[np.ndarray]:
    return [cache[1] > 0 for spec, cache in zip(specs[:-2], trace.caches[:-1])
            if spec.kind in ("conv", "dense") and spec.activation == "relu"]


def _check_loss(params, inputs, coef, targets):
    """Random smooth functional of both heads: sum c*log(pi) + (v - y)^2."""
    tr = forward(params, inputs)
    logp = np.log(tr.policy)
    loss = np.sum(coef * logp) + np.sum((tr.value - targets) ** 2)
    dlogits = coef - tr.policy * coef.sum(axis=1, keepdims=True)
    dvalue = 2.0 * (tr.value - targets)
    return loss, tr, dlogits, dvalue


def grad_check(specs: list[LayerSpec], input_shape: tuple[int, int, int], tolerance: float,
               rng: np.random.Generator, steps: int = 5, coords_per_layer: int = 64,
               eps: float = 1e-5) -> GradCheckReport:
    """Compare ``backward`` against central differences on sampled coordinates.

    Relative error is ``|a - n| / max(|a|, |n|, 1e-8)``. The differences are
    evaluated in extended precision (``np.longdouble``) so that float64
    round-off in the loss does not swamp small gradient entries. Coordinates
    whose perturbation flips a ReLU are redrawn, since finite differences are
    not meaningful across a kink.
    """
    params = build_network(specs, input_shape, rng)
    params.flat += rng.uniform(-0.1, 0.1, size=params.flat.shape) * (params.flat == 0)
    inputs = (rng.random((steps, *params.input_shape)) < 0.5).astype(np.float64)
    n_actions = params.n_actions
    coef = rng.normal(size=(steps, n_actions))
    targets = rng.normal(size=steps)

    _, base_trace, dlogits, dvalue = _check_loss(params, inputs, coef, targets)
    base_sig = _relu_signature(base_trace, params.specs)
    analytic = backward(base_trace, params, dlogits, dvalue)
    wide = NetworkParams(params.specs, params.input_shape, params.flat.astype(np.longdouble))
    wide_inputs = inputs.astype(np.longdouble)

    per_layer: dict[str, float] = {}
    total = 0
    offset = 0
    for idx, (spec, layer) in enumerate(zip(params.specs, params.layers)):
        size = sum(v.size for v in layer.values())
        name = f"{idx}:{spec.kind}"
        worst = 0.0
        candidates = rng.permutation(size)
        checked = 0
        for local in candidates:
            if checked >= coords_per_layer:
                break
            i = offset + int(local)
            orig = wide.flat[i]
            wide.flat[i] = orig + eps
            lp, tp, _, _ = _check_loss(wide, wide_inputs, coef, targets)
            wide.flat[i] = orig - eps
            lm, tm, _, _ = _check_loss(wide, wide_inputs, coef, targets)
            wide.flat[i] = orig
            sig_ok = all(np.array_equal(a, b) and np.array_equal(a, c) for a, b, c in
                         zip(base_sig, _relu_signature(tp, params.specs), _relu_signature(tm, params.specs)))
            if not sig_ok:
                continue
            numeric = float((lp - lm) / (2 * eps))
            a = analytic[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
            checked += 1
        per_layer[name] = worst
        total += checked
        offset += size
    max_rel = max(per_layer.values())
    return GradCheckReport(max_rel, bool(max_rel < tolerance), per_layer, total)


def gradcheck_networks() -> dict[str, tuple[list[LayerSpec], tuple[int, int, int]]]:
    """One small network per layer kind, plus full global and local agents."""
    heads = [PolicyHead(), ValueHead()]
    return {
        "Dense": ([Dense(12)] + heads, (2, 3, 3)),
        "Conv": ([Conv(4, 2, 1)] + heads, (2, 4, 4)),
        "Recurrent": ([Recurrent(8)] + heads, (2, 3, 3)),
        "Heads": (heads, (2, 3, 3)),
        "full_global": (global_view_specs(lstm=8, channels=4, dense=16), (4, 7, 9)),
        "full_local": (local_view_specs(lstm=8, channels=4, dense=16), (4, 7, 7)),
    }


def gradcheck_suite(seeds=range(10), tolerance: float = 1e-4, steps: int = 5,
                    coords_per_layer: int = 24) -> dict[str, list[GradCheckReport]]:
    """Run :func:`grad_check` on every network of :func:`gradcheck_networks` for each seed."""
    out: dict[str, list[GradCheckReport]] = {}
    for name, (specs, shape) in gradcheck_networks().items():
        out[name] = [grad_check(specs, shape, tolerance, np.random.default_rng([seed, 17]), steps=steps,
                                coords_per_layer=coords_per_layer) for seed in seeds]
    return out


# -- checkpoints ---------------------------------------------------------------------


def save_checkpoint(path: str | Path, params: NetworkParams) -> None:
    """Binary layout: ``OLNN``, u32 version, u32 header length, JSON header, f64 LE weights."""
    header = json.dumps({"input_shape": list(params.input_shape),
                         "specs": [s.to_dict() for s in params.specs]}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        fh.write(header)
        fh.write(params.flat.astype("<f8").tobytes())


def load_checkpoint(path: str | Path) -> NetworkParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not an OLNN checkpoint")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(blob[12:12 + hlen])
    specs = [LayerSpec(**d) for d in header["specs"]]
    flat = np.frombuffer(blob[12 + hlen:], dtype="<f8").astype(np.float64)
    return NetworkParams(specs, tuple(header["input_shape"]), flat)
