"""Float GRU-MLP classifier: architecture, forward pass, complexity counts.

The network is Algorithm-style plain: per-axis input normalization, one or
two unidirectional GRU layers, then a single-hidden-layer MLP with ReLU read
off the final hidden state. Stored parameters are float32 and the reference
inference path computes in float32; a float64 compute mode exists only so
gradient checks have headroom.

Inference here is deliberately per-window (that is how the deployed target
runs); training keeps its own batched kernels and is tested against this
forward pass.

Every multiplication site in ``forward`` reports to :mod:`kdq7.opcount`, and
``count_mults`` predicts that tally in closed form; the two are kept in
lockstep by test.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass

import numpy as np

from . import opcount
from .activations import sigmoid_approx, sigmoid_exact, tanh_approx, tanh_exact
from .data import NormStats
from .errors import DataContractError, InvalidInput

MODEL_FORMAT = "kdq7-model"
MODEL_VERSION = 1

_GATE_NAMES = ("r", "z", "n")


@dataclass(frozen=True)
class Architecture:
    num_gru_layers: int
    hidden_size: int
    num_classes: int
    sequence_length: int
    input_dim: int = 3

    def __post_init__(self):
        if self.num_gru_layers not in (1, 2):
            raise InvalidInput("num_gru_layers must be 1 or 2")
        if min(self.hidden_size, self.num_classes, self.input_dim) < 1:
            raise InvalidInput("hidden_size, num_classes, input_dim must be >= 1")
        # 0 is allowed so the multiplier count of the MLP alone is expressible
        if self.sequence_length < 0:
            raise InvalidInput("sequence_length must be >= 0")

    @property
    def mlp_hidden(self) -> int:
        return (self.hidden_size + self.num_classes) // 2

    def layer_input_dims(self) -> list[int]:
        return [self.input_dim] + [self.hidden_size] * (self.num_gru_layers - 1)


def _f32(a, name: str, shape: tuple[int, ...]) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(a, dtype=np.float32))
    if arr.shape != shape:
        raise InvalidInput(f"{name}: expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name}: non-finite entries")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class GruLayerParams:
    """One GRU layer. x-side matrices are (L, in), h-side are (L, L);
    gate suffixes: r reset, z update, n candidate."""

    w_xr: np.ndarray
    w_xz: np.ndarray
    w_xn: np.ndarray
    w_hr: np.ndarray
    w_hz: np.ndarray
    w_hn: np.ndarray
    b_xr: np.ndarray
    b_xz: np.ndarray
    b_xn: np.ndarray
    b_hr: np.ndarray
    b_hz: np.ndarray
    b_hn: np.ndarray

    def __post_init__(self):
        hidden, in_dim = np.shape(self.w_xr)
        for side, dim in (("x", in_dim), ("h", hidden)):
            for gate in _GATE_NAMES:
                wname, bname = f"w_{side}{gate}", f"b_{side}{gate}"
                object.__setattr__(self, wname, _f32(getattr(self, wname), wname, (hidden, dim)))
                object.__setattr__(self, bname, _f32(getattr(self, bname), bname, (hidden,)))

    @property
    def hidden_size(self) -> int:
        return self.w_xr.shape[0]

    @property
    def in_dim(self) -> int:
        return self.w_xr.shape[1]


@dataclass(frozen=True)
class MlpParams:
    w1: np.ndarray  # (mlp_hidden, L)
    b1: np.ndarray
    w2: np.ndarray  # (C, mlp_hidden)
    b2: np.ndarray

    def __post_init__(self):
        hidden, in_dim = np.shape(self.w1)
        out = np.shape(self.w2)[0]
        object.__setattr__(self, "w1", _f32(self.w1, "w1", (hidden, in_dim)))
        object.__setattr__(self, "b1", _f32(self.b1, "b1", (hidden,)))
        object.__setattr__(self, "w2", _f32(self.w2, "w2", (out, hidden)))
        object.__setattr__(self, "b2", _f32(self.b2, "b2", (out,)))


@dataclass(frozen=True)
class GruMlpModel:
    arch: Architecture
    norm: NormStats
    gru_layers: tuple[GruLayerParams, ...]
    mlp: MlpParams

    def __post_init__(self):
        a = self.arch
        if len(self.gru_layers) != a.num_gru_layers:
            raise InvalidInput("gru layer count does not match architecture")
        for layer, in_dim in zip(self.gru_layers, a.layer_input_dims()):
            if layer.hidden_size != a.hidden_size or layer.in_dim != in_dim:
                raise InvalidInput(
                    f"layer shape ({layer.hidden_size}, {layer.in_dim}) does not match "
                    f"architecture ({a.hidden_size}, {in_dim})"
                )
        if self.norm.mean.shape != (a.input_dim,):
            raise InvalidInput("norm stats dimension does not match input_dim")
        if self.mlp.w1.shape != (a.mlp_hidden, a.hidden_size) or self.mlp.w2.shape != (
            a.num_classes,
            a.mlp_hidden,
        ):
            raise InvalidInput("mlp shapes do not match architecture")
        object.__setattr__(self, "gru_layers", tuple(self.gru_layers))

    def h0(self, dtype=np.float32) -> np.ndarray:
        return np.zeros(self.arch.hidden_size, dtype=dtype)


def _mv(w: np.ndarray, v: np.ndarray) -> np.ndarray:
    opcount.add_float_mults(w.shape[0] * w.shape[1])
    return w @ v


def normalize(a, model: GruMlpModel) -> np.ndarray:
    """Element-wise (a - mean) * inv_std; accepts one reading or a window."""
    a = np.asarray(a)
    dt = a.dtype if np.issubdtype(a.dtype, np.floating) else np.dtype(np.float32)
    out = (a.astype(dt) - model.norm.mean.astype(dt)) * model.norm.inv_std.astype(dt)
    opcount.add_float_mults(a.size)
    return out


def gru_cell(
    x: np.ndarray,
    h_prev: np.ndarray,
    params: GruLayerParams,
    approx_activations: bool = False,
) -> np.ndarray:
    """One GRU step: gates from x and h_prev, convex update of the state."""
    if x.shape != (params.in_dim,) or h_prev.shape != (params.hidden_size,):
        raise InvalidInput(
            f"gru_cell shapes: x {x.shape} vs in {params.in_dim}, "
            f"h {h_prev.shape} vs hidden {params.hidden_size}"
        )
    sig = sigmoid_approx if approx_activations else sigmoid_exact
    tanh = tanh_approx if approx_activations else tanh_exact
    dt = x.dtype

    def p(name):
        a = getattr(params, name)
        return a if a.dtype == dt else a.astype(dt)

    r = sig(_mv(p("w_xr"), x) + p("b_xr") + _mv(p("w_hr"), h_prev) + p("b_hr"))
    z = sig(_mv(p("w_xz"), x) + p("b_xz") + _mv(p("w_hz"), h_prev) + p("b_hz"))
    hn = _mv(p("w_hn"), h_prev) + p("b_hn")
    opcount.add_float_mults(r.size)
    n = tanh(_mv(p("w_xn"), x) + p("b_xn") + r * hn)
    opcount.add_float_mults(2 * z.size)
    return (1 - z) * n + z * h_prev


def forward(
    window: np.ndarray,
    model: GruMlpModel,
    approx_activations: bool = False,
    compute_dtype=np.float32,
) -> np.ndarray:
    """Logits for one window, shape (num_classes,)."""
    a = model.arch
    window = np.asarray(window, dtype=compute_dtype)
    if window.shape != (a.sequence_length, a.input_dim):
        raise InvalidInput(
            f"window shape {window.shape} does not match ({a.sequence_length}, {a.input_dim})"
        )
    dt = np.dtype(compute_dtype)
    seq = normalize(window, model).astype(dt, copy=False)
    h_final = np.zeros(a.hidden_size, dtype=dt)
    for layer in model.gru_layers:
        h = np.zeros(a.hidden_size, dtype=dt)
        outputs = np.empty((a.sequence_length, a.hidden_size), dtype=dt)
        for t in range(a.sequence_length):
            h = gru_cell(seq[t], h, layer, approx_activations)
            outputs[t] = h
        seq = outputs
        h_final = h

    mlp = model.mlp
    w1 = mlp.w1.astype(dt, copy=False)
    w2 = mlp.w2.astype(dt, copy=False)
    hidden = np.maximum(_mv(w1, h_final) + mlp.b1.astype(dt, copy=False), 0)
    return _mv(w2, hidden) + mlp.b2.astype(dt, copy=False)


def predict(window: np.ndarray, model: GruMlpModel, approx_activations: bool = False) -> int:
    """Class of the largest logit; ties go to the lowest index."""
    return int(np.argmax(forward(window, model, approx_activations)))


def count_params(arch: Architecture) -> int:
    """Stored parameters: GRU weights/biases, MLP, and the norm vectors."""
    total = 2 * arch.input_dim
    hidden = arch.hidden_size
    for in_dim in arch.layer_input_dims():
        total += 3 * (hidden * in_dim + hidden * hidden + 2 * hidden)
    m = arch.mlp_hidden
    total += m * hidden + m + arch.num_classes * m + arch.num_classes
    return total


def count_mults(arch: Architecture) -> int:
    """Float multiplications of one forward pass; matches the instrumented
    tally exactly (normalization, six MVMs plus three Hadamard products per
    step and layer, two MLP MVMs)."""
    hidden = arch.hidden_size
    n = arch.sequence_length
    per_step = sum(
        3 * (hidden * in_dim) + 3 * hidden * hidden + 3 * hidden
        for in_dim in arch.layer_input_dims()
    )
    return n * arch.input_dim + n * per_step + arch.mlp_hidden * hidden + arch.num_classes * arch.mlp_hidden


# ---------------------------------------------------------------------------
# serialization


def _encode_array(a: np.ndarray, encoding: str):
    if encoding == "list":
        return a.tolist()
    payload = np.ascontiguousarray(a, dtype="<f4").tobytes()
    return {"shape": list(a.shape), "data": base64.b64encode(payload).decode("ascii")}


def _decode_array(obj, encoding: str, name: str) -> np.ndarray:
    try:
        if encoding == "list":
            return np.asarray(obj, dtype=np.float32)
        shape = tuple(obj["shape"])
        raw = base64.b64decode(obj["data"], validate=True)
        arr = np.frombuffer(raw, dtype="<f4")
        return arr.reshape(shape).astype(np.float32)
    except Exception as e:
        raise DataContractError(f"model field {name}: {e}") from None


def model_to_dict(model: GruMlpModel, encoding: str = "b64") -> dict:
    if encoding not in ("b64", "list"):
        raise InvalidInput("encoding must be 'b64' or 'list'")
    a = model.arch
    enc = lambda arr: _encode_array(arr, encoding)  # noqa: E731
    layers = []
    for layer in model.gru_layers:
        layers.append(
            {
                name: enc(getattr(layer, name))
                for side in "xh"
                for gate in _GATE_NAMES
                for name in (f"w_{side}{gate}", f"b_{side}{gate}")
            }
        )
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "encoding": encoding,
        "arch": {
            "num_gru_layers": a.num_gru_layers,
            "hidden_size": a.hidden_size,
            "num_classes": a.num_classes,
            "sequence_length": a.sequence_length,
            "input_dim": a.input_dim,
        },
        "norm_mean": enc(model.norm.mean),
        "norm_inv_std": enc(model.norm.inv_std),
        "gru_layers": layers,
        "mlp": {k: enc(getattr(model.mlp, k)) for k in ("w1", "b1", "w2", "b2")},
    }


def model_from_dict(doc: dict) -> GruMlpModel:
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise DataContractError("not a model document")
    if doc.get("version") != MODEL_VERSION:
        raise DataContractError(f"unsupported model version {doc.get('version')!r}")
    encoding = doc.get("encoding")
    if encoding not in ("b64", "list"):
        raise DataContractError(f"unknown encoding {encoding!r}")
    try:
        arch = Architecture(**doc["arch"])
        dec = lambda obj, name: _decode_array(obj, encoding, name)  # noqa: E731
        norm = NormStats(
            mean=dec(doc["norm_mean"], "norm_mean"),
            inv_std=dec(doc["norm_inv_std"], "norm_inv_std"),
        )
        layers = tuple(
            GruLayerParams(**{k: dec(v, k) for k, v in layer.items()})
            for layer in doc["gru_layers"]
        )
        mlp = MlpParams(**{k: dec(v, k) for k, v in doc["mlp"].items()})
        return GruMlpModel(arch=arch, norm=norm, gru_layers=layers, mlp=mlp)
    except (KeyError, TypeError) as e:
        raise DataContractError(f"malformed model document: {e}") from None
    except InvalidInput as e:
        raise DataContractError(str(e)) from None


def save_model(model: GruMlpModel, path, encoding: str = "b64") -> None:
    doc = model_to_dict(model, encoding)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_model(path) -> GruMlpModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise DataContractError(f"{path}: invalid JSON ({e.msg})") from None
    return model_from_dict(doc)
