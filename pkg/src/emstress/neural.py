"""Dense tanh network producing time derivatives of junction stress
gradients, with hand-written reverse mode and a binary checkpoint format.

The network sees fixed (non-trainable) affine normalisations on its
inputs and outputs; only the weights and biases are trained.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import MAX_DEGREE, NodeContext

N_OUTPUTS = MAX_DEGREE - 1
STANDARD_INPUTS = 1 + 2 + MAX_DEGREE
PARAMETERIZED_INPUTS = STANDARD_INPUTS + 2 * MAX_DEGREE
_MAGIC = b"EMSMLP01"


class InvalidArchitecture(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class ArchitectureMismatch(ValueError):
    pass


def n_inputs(mode: str) -> int:
    if mode == "per_case":
        return STANDARD_INPUTS
    if mode == "parameterized":
        return PARAMETERIZED_INPUTS
    raise ValueError(f"unknown input mode {mode!r}")


def encode_inputs(ctx: NodeContext, t, mode: str = "per_case") -> np.ndarray:
    """Rows ``[t, Cx, Cy, G1..G4]`` (+ the far-end coordinates of the
    incident segments in parameterized mode) for each time in ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float)).ravel()
    parts = [t[:, None], np.broadcast_to(ctx.coord, (len(t), 2)),
             np.broadcast_to(ctx.adj_G, (len(t), MAX_DEGREE))]
    if mode == "parameterized":
        parts.append(np.broadcast_to(ctx.adj_coords.ravel(), (len(t), 2 * MAX_DEGREE)))
    elif mode != "per_case":
        raise ValueError(f"unknown input mode {mode!r}")
    return np.hstack(parts)


def param_count(layer_sizes) -> int:
    return sum(a * b + b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))


@dataclass
class MlpModel:
    layer_sizes: tuple[int, ...]
    params: np.ndarray
    input_shift: np.ndarray = None
    input_scale: np.ndarray = None
    output_scale: np.ndarray = None
    seed: int | None = None
    activation: str = "tanh"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.layer_sizes = tuple(int(v) for v in self.layer_sizes)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise InvalidArchitecture(f"bad layer sizes {self.layer_sizes}")
        self.params = np.ascontiguousarray(self.params, dtype=float)
        if self.params.shape != (param_count(self.layer_sizes),):
            raise InvalidArchitecture("parameter vector does not match layer sizes")
        n_in, n_out = self.layer_sizes[0], self.layer_sizes[-1]
        self.input_shift = np.zeros(n_in) if self.input_shift is None else np.asarray(self.input_shift, float)
        self.input_scale = np.ones(n_in) if self.input_scale is None else np.asarray(self.input_scale, float)
        self.output_scale = np.ones(n_out) if self.output_scale is None else np.asarray(self.output_scale, float)

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def layers(self, params: np.ndarray | None = None):
        """(W, b) views into a flat parameter vector; W is fan_in x fan_out."""
        p = self.params if params is None else params
        out, k = [], 0
        for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            W = p[k:k + a * b].reshape(a, b)
            k += a * b
            out.append((W, p[k:k + b]))
            k += b
        return out

    def copy(self) -> "MlpModel":
        return MlpModel(self.layer_sizes, self.params.copy(), self.input_shift.copy(),
                        self.input_scale.copy(), self.output_scale.copy(), self.seed,
                        self.activation, dict(self.meta))


def init_xavier(layer_sizes, seed: int = 0) -> MlpModel:
    sizes = tuple(int(v) for v in layer_sizes)
    if len(sizes) < 2 or min(sizes) < 1:
        raise InvalidArchitecture(f"bad layer sizes {sizes}")
    rng = np.random.default_rng(seed)
    chunks = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (a + b))
        chunks.append(rng.uniform(-limit, limit, size=a * b))
        chunks.append(np.zeros(b))
    return MlpModel(sizes, np.concatenate(chunks), seed=seed)


def default_architecture(mode: str = "per_case", hidden: int = 5, width: int = 50) -> tuple[int, ...]:
    return (n_inputs(mode),) + (width,) * hidden + (N_OUTPUTS,)


def _check_input(model: MlpModel, X):
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X2 = X[None, :] if single else X
    if X2.ndim != 2 or X2.shape[1] != model.n_in:
        raise DimensionMismatch(f"expected inputs with {model.n_in} features, got shape {X.shape}")
    return X2, single


def forward_cached(model: MlpModel, X, params: np.ndarray | None = None):
    """Forward pass keeping the hidden activations for ``backward``."""
    X2, single = _check_input(model, X)
    h = (X2 - model.input_shift) / model.input_scale
    acts = [h]
    layers = model.layers(params)
    for W, b in layers[:-1]:
        h = np.tanh(h @ W + b)
        acts.append(h)
    W, b = layers[-1]
    y = (h @ W + b) * model.output_scale
    return (y[0] if single else y), acts


def forward(model: MlpModel, X, params: np.ndarray | None = None) -> np.ndarray:
    return forward_cached(model, X, params)[0]


def backward(model: MlpModel, X, cotangent, params: np.ndarray | None = None, cache=None):
    """Reverse mode: returns (gradient w.r.t. the flat parameters, gradient
    w.r.t. the inputs) of ``sum(cotangent * forward(X))``."""
    X2, single = _check_input(model, X)
    ct = np.asarray(cotangent, dtype=float)
    ct = ct[None, :] if ct.ndim == 1 else ct
    if ct.shape != (X2.shape[0], model.n_out):
        raise DimensionMismatch(f"cotangent shape {ct.shape} does not match outputs")
    if cache is None:
        _, acts = forward_cached(model, X2, params)
    else:
        acts = cache
    layers = model.layers(params)
    grads = []
    delta = ct * model.output_scale
    for li in range(len(layers) - 1, -1, -1):
        W, _ = layers[li]
        a = acts[li]
        grads.append((a.T @ delta, delta.sum(axis=0)))
        delta = delta @ W.T
        if li > 0:
            delta = delta * (1.0 - a * a)
    grads.reverse()
    flat = np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])
    gx = delta / model.input_scale
    return flat, (gx[0] if single else gx)


def save_checkpoint(model: MlpModel, path, meta: dict | None = None) -> Path:
    """Write ``path`` (binary) and ``path.json`` (sidecar).

    Binary layout, little-endian: 8-byte magic, uint32 layer count n,
    n x uint32 layer sizes, then float64 parameters, input shift, input
    scale and output scale.
    """
    path = Path(path)
    sizes = model.layer_sizes
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack(f"<I{len(sizes)}I", len(sizes), *sizes))
        for arr in (model.params, model.input_shift, model.input_scale, model.output_scale):
            fh.write(np.asarray(arr, dtype="<f8").tobytes())
    side = {"layer_sizes": list(sizes), "n_params": int(model.params.size), "seed": model.seed,
            "activation": model.activation, "binary": path.name}
    side.update(model.meta)
    side.update(meta or {})
    Path(str(path) + ".json").write_text(json.dumps(side, indent=2, sort_keys=True))
    return path


def load_checkpoint(path) -> MlpModel:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != _MAGIC:
        raise ArchitectureMismatch(f"{path} is not a model checkpoint")
    (n,) = struct.unpack_from("<I", raw, 8)
    sizes = struct.unpack_from(f"<{n}I", raw, 12)
    off = 12 + 4 * n
    data = np.frombuffer(raw, dtype="<f8", offset=off).astype(float)
    npar = param_count(sizes)
    n_in, n_out = sizes[0], sizes[-1]
    if data.size != npar + 2 * n_in + n_out:
        raise ArchitectureMismatch("checkpoint payload length does not match its header")
    params = data[:npar]
    shift = data[npar:npar + n_in]
    scale = data[npar + n_in:npar + 2 * n_in]
    oscale = data[npar + 2 * n_in:]
    meta = {}
    side = Path(str(path) + ".json")
    if side.exists():
        meta = json.loads(side.read_text())
        if tuple(meta.get("layer_sizes", sizes)) != tuple(sizes):
            raise ArchitectureMismatch("sidecar layer sizes disagree with the binary header")
    seed = meta.get("seed")
    extra = {k: v for k, v in meta.items()
             if k not in ("layer_sizes", "n_params", "seed", "activation", "binary")}
    return MlpModel(sizes, params, shift, scale, oscale, seed, meta.get("activation", "tanh"), extra)
