"""Losses, BPTT, and the optimization loop.

Distillation loss: with hard-label cross entropy l_h and the cross entropy
l_s between temperature-softened teacher and student distributions, the
training objective is

    l = alpha * l_h + (1 - alpha) * t**2 * l_s

where the t**2 factor compensates the 1/t**2 the softening applies to the
soft-label gradients. Defaults alpha=0.1, t=3.

Training is plain mini-batch Adam (or SGD with momentum) over windows, with
gradients computed by backpropagation through time. Internally the six GRU
matrices per layer are stacked into one x-side and one h-side matrix (gate
block order: reset, update, candidate) so each timestep is two matmuls over
the whole batch; the public model type keeps the per-gate tensors, and
conversion happens at the module boundary.

Everything is seeded: one seed stream initializes parameters, a second one
drives epoch shuffling, so (seed, config, data) determines the final weights
bit for bit. Normalization constants are dataset statistics, not trained
parameters; they are computed from the training split and frozen.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .activations import sigmoid_exact
from .data import Dataset, NormStats, compute_norm_stats
from .errors import InvalidInput, TrainingError
from .metrics import confusion, mcc_multiclass
from .model import Architecture, GruLayerParams, GruMlpModel, MlpParams

_GATES = ("r", "z", "n")


@dataclass(frozen=True)
class KdConfig:
    alpha: float = 0.1
    temperature: float = 3.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidInput("alpha must be in [0, 1]")
        if self.temperature < 1.0:
            raise InvalidInput("temperature must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "adam"
    grad_clip_norm: float = 5.0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.grad_clip_norm <= 0:
            raise InvalidInput("learning_rate, batch_size, grad_clip_norm must be positive")
        if self.epochs < 0:
            raise InvalidInput("epochs must be >= 0")
        if self.optimizer not in ("adam", "sgd-momentum"):
            raise InvalidInput("optimizer must be 'adam' or 'sgd-momentum'")


@dataclass(frozen=True)
class Gradients:
    """Per-tensor gradients, keyed and shaped exactly like the model fields."""

    gru_layers: tuple[dict, ...]
    mlp: dict


# ---------------------------------------------------------------------------
# losses (public single-vector forms)


def _log_softmax_rows(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_t(logits, temperature: float = 1.0) -> np.ndarray:
    """Temperature softmax with max-subtraction."""
    if temperature <= 0:
        raise InvalidInput("temperature must be positive")
    z = np.asarray(logits, dtype=np.float64) / temperature
    return np.exp(_log_softmax_rows(z))


def hard_loss(student_logits, label: int) -> float:
    z = np.asarray(student_logits, dtype=np.float64)
    if not 0 <= label < z.shape[-1]:
        raise InvalidInput(f"label {label} out of range for {z.shape[-1]} classes")
    return float(-_log_softmax_rows(z)[label])


def soft_loss(student_logits, teacher_logits, temperature: float) -> float:
    z = np.asarray(student_logits, dtype=np.float64)
    v = np.asarray(teacher_logits, dtype=np.float64)
    if z.shape != v.shape:
        raise InvalidInput("student and teacher logits must have matching shapes")
    p = softmax_t(v, temperature)
    log_q = _log_softmax_rows(z / temperature)
    return float(-(p * log_q).sum())


def kd_loss(student_logits, label: int, teacher_logits, cfg: KdConfig) -> float:
    l_h = hard_loss(student_logits, label)
    l_s = soft_loss(student_logits, teacher_logits, cfg.temperature)
    return cfg.alpha * l_h + (1.0 - cfg.alpha) * cfg.temperature**2 * l_s


# ---------------------------------------------------------------------------
# stacked parameter form (internal)


@dataclass
class _StackedLayer:
    w_x: np.ndarray  # (3L, in)
    w_h: np.ndarray  # (3L, L)
    b_x: np.ndarray  # (3L,)
    b_h: np.ndarray  # (3L,)


@dataclass
class _Stacked:
    layers: list[_StackedLayer]
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def tensors(self):
        for i, l in enumerate(self.layers):
            yield f"layer{i}.w_x", l.w_x
            yield f"layer{i}.w_h", l.w_h
            yield f"layer{i}.b_x", l.b_x
            yield f"layer{i}.b_h", l.b_h
        yield "w1", self.w1
        yield "b1", self.b1
        yield "w2", self.w2
        yield "b2", self.b2


def _stack_model(model: GruMlpModel, dtype=np.float32) -> _Stacked:
    layers = []
    for lp in model.gru_layers:
        layers.append(
            _StackedLayer(
                w_x=np.concatenate([lp.w_xr, lp.w_xz, lp.w_xn]).astype(dtype),
                w_h=np.concatenate([lp.w_hr, lp.w_hz, lp.w_hn]).astype(dtype),
                b_x=np.concatenate([lp.b_xr, lp.b_xz, lp.b_xn]).astype(dtype),
                b_h=np.concatenate([lp.b_hr, lp.b_hz, lp.b_hn]).astype(dtype),
            )
        )
    m = model.mlp
    return _Stacked(
        layers=layers,
        w1=m.w1.astype(dtype),
        b1=m.b1.astype(dtype),
        w2=m.w2.astype(dtype),
        b2=m.b2.astype(dtype),
    )


def _unstack(stacked: _Stacked, arch: Architecture, norm: NormStats) -> GruMlpModel:
    # copies, never views: the param classes freeze their arrays, and the
    # stacked tensors keep being updated in place by the optimizer
    hidden = arch.hidden_size
    layers = []
    for sl in stacked.layers:
        blocks = {}
        for gi, gate in enumerate(_GATES):
            sl_slice = slice(gi * hidden, (gi + 1) * hidden)
            blocks[f"w_x{gate}"] = sl.w_x[sl_slice].copy()
            blocks[f"w_h{gate}"] = sl.w_h[sl_slice].copy()
            blocks[f"b_x{gate}"] = sl.b_x[sl_slice].copy()
            blocks[f"b_h{gate}"] = sl.b_h[sl_slice].copy()
        layers.append(GruLayerParams(**blocks))
    mlp = MlpParams(
        w1=stacked.w1.copy(), b1=stacked.b1.copy(),
        w2=stacked.w2.copy(), b2=stacked.b2.copy(),
    )
    return GruMlpModel(arch=arch, norm=norm, gru_layers=tuple(layers), mlp=mlp)


def init_model(arch: Architecture, norm: NormStats, seed: int) -> GruMlpModel:
    """Seeded initialization: every weight uniform(-1/sqrt(L), 1/sqrt(L)),
    all biases zero. Draw order is fixed (per layer: w_xr, w_xz, w_xn, w_hr,
    w_hz, w_hn; then mlp w1, w2), so a seed pins the exact parameters."""
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[0])
    bound = 1.0 / np.sqrt(arch.hidden_size)
    hidden = arch.hidden_size

    def draw(*shape):
        return rng.uniform(-bound, bound, shape).astype(np.float32)

    layers = []
    for in_dim in arch.layer_input_dims():
        kw = {}
        for gate in _GATES:
            kw[f"w_x{gate}"] = draw(hidden, in_dim)
        for gate in _GATES:
            kw[f"w_h{gate}"] = draw(hidden, hidden)
        for side in "xh":
            for gate in _GATES:
                kw[f"b_{side}{gate}"] = np.zeros(hidden, dtype=np.float32)
        layers.append(GruLayerParams(**kw))
    mlp = MlpParams(
        w1=draw(arch.mlp_hidden, hidden),
        b1=np.zeros(arch.mlp_hidden, dtype=np.float32),
        w2=draw(arch.num_classes, arch.mlp_hidden),
        b2=np.zeros(arch.num_classes, dtype=np.float32),
    )
    return GruMlpModel(arch=arch, norm=norm, gru_layers=tuple(layers), mlp=mlp)


# ---------------------------------------------------------------------------
# batched forward/backward (exact activations, training path)


def _forward_cached(stacked: _Stacked, xn: np.ndarray, want_cache: bool):
    """Run the GRU stack over a normalized batch (B, N, in).

    Returns (logits, cache). The cache holds, per layer, the tensors the
    backward pass reuses: inputs, gate values, candidate, h-side candidate
    preactivation, and the h sequence including h0.
    """
    b, n, _ = xn.shape
    dt = xn.dtype
    seq = xn
    caches = []
    hidden = stacked.layers[0].w_h.shape[1]
    h = np.zeros((b, hidden), dtype=dt)
    for sl in stacked.layers:
        pre_x = seq @ sl.w_x.T + sl.b_x  # (B, N, 3L)
        h = np.zeros((b, hidden), dtype=dt)
        r_all = np.empty((b, n, hidden), dtype=dt) if want_cache else None
        z_all = np.empty((b, n, hidden), dtype=dt) if want_cache else None
        nc_all = np.empty((b, n, hidden), dtype=dt) if want_cache else None
        hwn_all = np.empty((b, n, hidden), dtype=dt) if want_cache else None
        h_seq = np.empty((b, n + 1, hidden), dtype=dt) if want_cache else None
        outs = np.empty((b, n, hidden), dtype=dt)
        if want_cache:
            h_seq[:, 0] = 0
        for t in range(n):
            gh = h @ sl.w_h.T + sl.b_h
            gx = pre_x[:, t]
            r = sigmoid_exact(gx[:, :hidden] + gh[:, :hidden])
            z = sigmoid_exact(gx[:, hidden : 2 * hidden] + gh[:, hidden : 2 * hidden])
            hwn = gh[:, 2 * hidden :]
            nc = np.tanh(gx[:, 2 * hidden :] + r * hwn)
            h = (1 - z) * nc + z * h
            outs[:, t] = h
            if want_cache:
                r_all[:, t] = r
                z_all[:, t] = z
                nc_all[:, t] = nc
                hwn_all[:, t] = hwn
                h_seq[:, t + 1] = h
        if want_cache:
            caches.append((seq, r_all, z_all, nc_all, hwn_all, h_seq))
        seq = outs

    h_final = h
    hid_pre = h_final @ stacked.w1.T + stacked.b1
    hid = np.maximum(hid_pre, 0)
    logits = hid @ stacked.w2.T + stacked.b2
    return logits, (caches, h_final, hid_pre, hid)


def _batch_loss_and_dlogits(
    logits: np.ndarray,
    labels: np.ndarray,
    teacher_logits: np.ndarray | None,
    kd: KdConfig | None,
):
    """Mean loss over the batch and its gradient w.r.t. the logits."""
    b, c = logits.shape
    z = logits.astype(np.float64)
    log_q = _log_softmax_rows(z)
    q = np.exp(log_q)
    onehot = np.zeros_like(q)
    onehot[np.arange(b), labels] = 1.0
    l_hard = -log_q[np.arange(b), labels]
    if teacher_logits is None:
        loss = float(l_hard.mean())
        dlogits = (q - onehot) / b
        return loss, dlogits
    t = kd.temperature
    alpha = kd.alpha
    p = np.exp(_log_softmax_rows(teacher_logits.astype(np.float64) / t))
    log_qt = _log_softmax_rows(z / t)
    l_soft = -(p * log_qt).sum(axis=1)
    loss = float((alpha * l_hard + (1 - alpha) * t * t * l_soft).mean())
    qt = np.exp(log_qt)
    dlogits = (alpha * (q - onehot) + (1 - alpha) * t * (qt - p)) / b
    return loss, dlogits


def _backward_stacked(
    stacked: _Stacked,
    xn: np.ndarray,
    labels: np.ndarray,
    teacher_logits: np.ndarray | None,
    kd: KdConfig | None,
):
    """Gradients of the mean loss for every stacked tensor."""
    logits, (caches, h_final, hid_pre, hid) = _forward_cached(stacked, xn, want_cache=True)
    loss, dlogits = _batch_loss_and_dlogits(logits, labels, teacher_logits, kd)
    dt = xn.dtype
    dlogits = dlogits.astype(dt)

    grads = {}
    grads["w2"] = dlogits.T @ hid
    grads["b2"] = dlogits.sum(axis=0)
    dhid = dlogits @ stacked.w2
    dhid_pre = dhid * (hid_pre > 0)
    grads["w1"] = dhid_pre.T @ h_final
    grads["b1"] = dhid_pre.sum(axis=0)
    dh_final = dhid_pre @ stacked.w1

    b, n, _ = xn.shape
    hidden = stacked.layers[0].w_h.shape[1]
    # gradient flowing into each layer's output sequence; topmost layer only
    # receives signal at the last step
    d_out = np.zeros((b, n, hidden), dtype=dt)
    d_out[:, n - 1] = dh_final

    for li in range(len(stacked.layers) - 1, -1, -1):
        sl = stacked.layers[li]
        seq_in, r_all, z_all, nc_all, hwn_all, h_seq = caches[li]
        dgx = np.empty((b, n, 3 * hidden), dtype=dt)
        dgh = np.empty((b, n, 3 * hidden), dtype=dt)
        dh_next = np.zeros((b, hidden), dtype=dt)
        for t in range(n - 1, -1, -1):
            dh = d_out[:, t] + dh_next
            r, z, nc, hwn = r_all[:, t], z_all[:, t], nc_all[:, t], hwn_all[:, t]
            h_prev = h_seq[:, t]
            dz = dh * (h_prev - nc) * z * (1 - z)
            dnc = dh * (1 - z) * (1 - nc * nc)
            dhwn = dnc * r
            dr = dnc * hwn * r * (1 - r)
            dgx[:, t, :hidden] = dr
            dgx[:, t, hidden : 2 * hidden] = dz
            dgx[:, t, 2 * hidden :] = dnc
            dgh[:, t, :hidden] = dr
            dgh[:, t, hidden : 2 * hidden] = dz
            dgh[:, t, 2 * hidden :] = dhwn
            dh_next = dh * z + dgh[:, t] @ sl.w_h
        flat_gx = dgx.reshape(b * n, 3 * hidden)
        flat_gh = dgh.reshape(b * n, 3 * hidden)
        grads[f"layer{li}.w_x"] = flat_gx.T @ seq_in.reshape(b * n, -1)
        grads[f"layer{li}.w_h"] = flat_gh.T @ h_seq[:, :n].reshape(b * n, hidden)
        grads[f"layer{li}.b_x"] = flat_gx.sum(axis=0)
        grads[f"layer{li}.b_h"] = flat_gh.sum(axis=0)
        if li > 0:
            d_out = (flat_gx @ sl.w_x).reshape(b, n, hidden)

    return grads, loss, logits


def _grads_to_public(grads: dict, arch: Architecture) -> Gradients:
    hidden = arch.hidden_size
    layers = []
    for li in range(arch.num_gru_layers):
        out = {}
        for gi, gate in enumerate(_GATES):
            sl = slice(gi * hidden, (gi + 1) * hidden)
            out[f"w_x{gate}"] = grads[f"layer{li}.w_x"][sl]
            out[f"w_h{gate}"] = grads[f"layer{li}.w_h"][sl]
            out[f"b_x{gate}"] = grads[f"layer{li}.b_x"][sl]
            out[f"b_h{gate}"] = grads[f"layer{li}.b_h"][sl]
        layers.append(out)
    mlp = {k: grads[k] for k in ("w1", "b1", "w2", "b2")}
    return Gradients(gru_layers=tuple(layers), mlp=mlp)


def backward(
    windows: np.ndarray,
    labels: Sequence[int],
    model: GruMlpModel,
    kd: KdConfig | None = None,
    teacher_logits: np.ndarray | None = None,
    compute_dtype=np.float32,
) -> tuple[Gradients, float]:
    """Gradients of the mean loss over a batch of raw windows.

    Normalization constants are applied but not differentiated (they are
    frozen dataset statistics). Pass teacher logits together with a KdConfig
    for the distillation objective; omit both for plain cross entropy.
    """
    windows = np.asarray(windows, dtype=compute_dtype)
    labels = np.asarray(labels, dtype=np.int64)
    if windows.ndim != 3 or windows.shape[0] != labels.shape[0]:
        raise InvalidInput("windows must be (B, N, input_dim) matching labels")
    if (teacher_logits is None) != (kd is None):
        raise InvalidInput("teacher_logits and kd config must be passed together")
    if teacher_logits is not None:
        teacher_logits = np.asarray(teacher_logits)
        if teacher_logits.shape != (labels.shape[0], model.arch.num_classes):
            raise InvalidInput("teacher_logits must be (B, num_classes)")
    dt = np.dtype(compute_dtype)
    stacked = _stack_model(model, dtype=dt)
    mean = model.norm.mean.astype(dt)
    inv = model.norm.inv_std.astype(dt)
    xn = (windows - mean) * inv
    grads, loss, _ = _backward_stacked(stacked, xn, labels, teacher_logits, kd)
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss!r} in backward pass")
    return _grads_to_public(grads, model.arch), loss


# ---------------------------------------------------------------------------
# optimizer and loop


class _Optimizer:
    def __init__(self, cfg: TrainConfig, tensors: list[tuple[str, np.ndarray]]):
        self.cfg = cfg
        self.step_count = 0
        self.state = {
            name: (np.zeros_like(t), np.zeros_like(t)) for name, t in tensors
        }

    def step(self, stacked: _Stacked, grads: dict) -> None:
        cfg = self.cfg
        total = 0.0
        for name, _ in stacked.tensors():
            g = grads[name]
            total += float((g.astype(np.float64) ** 2).sum())
        norm = np.sqrt(total)
        scale = 1.0 if norm <= cfg.grad_clip_norm else cfg.grad_clip_norm / norm
        self.step_count += 1
        if cfg.optimizer == "adam":
            b1, b2, eps = 0.9, 0.999, 1e-8
            c1 = 1 - b1**self.step_count
            c2 = 1 - b2**self.step_count
            for name, tensor in stacked.tensors():
                g = grads[name] * np.float32(scale)
                m, v = self.state[name]
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                tensor -= np.float32(cfg.learning_rate) * (m / c1) / (np.sqrt(v / c2) + eps)
        else:  # sgd-momentum
            momentum = 0.9
            for name, tensor in stacked.tensors():
                g = grads[name] * np.float32(scale)
                m, _ = self.state[name]
                m *= momentum
                m += g
                tensor -= np.float32(cfg.learning_rate) * m


def predict_batch_float(model: GruMlpModel, windows: np.ndarray) -> np.ndarray:
    """Argmax class per window via the batched float path (training-side
    convenience; the deployed per-window path lives in the model module)."""
    stacked = _stack_model(model)
    xn = ((windows.astype(np.float32) - model.norm.mean) * model.norm.inv_std).astype(np.float32)
    logits, _ = _forward_cached(stacked, xn, want_cache=False)
    return np.argmax(logits, axis=1)


def forward_batch_float(model: GruMlpModel, windows: np.ndarray) -> np.ndarray:
    """Batched logits on the float training path (exact activations)."""
    stacked = _stack_model(model)
    xn = ((windows.astype(np.float32) - model.norm.mean) * model.norm.inv_std).astype(np.float32)
    logits, _ = _forward_cached(stacked, xn, want_cache=False)
    return logits


def train(
    dataset: Dataset,
    train_ids: Sequence[int],
    arch: Architecture,
    cfg: TrainConfig,
    kd: KdConfig | None = None,
    soft_labels: Mapping[int, np.ndarray] | None = None,
    val_ids: Sequence[int] | None = None,
    log_path=None,
) -> GruMlpModel:
    """Train a model on the given ids; fully deterministic per seed.

    Soft labels are teacher logits keyed by datapoint id; providing them
    switches the objective to the distillation loss. Every training id must
    then be covered; a missing id is an error rather than a silent fallback
    to hard labels.
    """
    if kd is None:
        kd = KdConfig()
    x, y, ids = dataset.gather(train_ids)
    norm = compute_norm_stats(dataset, ids)
    teacher = None
    if soft_labels is not None:
        missing = [i for i in ids if i not in soft_labels]
        if missing:
            raise InvalidInput(f"soft labels missing for ids {missing[:5]}")
        teacher = np.stack([np.asarray(soft_labels[i], dtype=np.float32) for i in ids])
        if teacher.shape != (len(ids), arch.num_classes):
            raise InvalidInput("soft label vectors must have num_classes entries")

    seqs = np.random.SeedSequence(cfg.seed).spawn(2)
    model = init_model(arch, norm, cfg.seed)
    shuffle_rng = np.random.default_rng(seqs[1])

    stacked = _stack_model(model)
    xn = ((x.astype(np.float32) - norm.mean) * norm.inv_std).astype(np.float32)
    labels = y

    val_x = val_y = None
    if val_ids is not None:
        val_x, val_y, _ = dataset.gather(val_ids)

    opt = _Optimizer(cfg, list(stacked.tensors()))
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            order = shuffle_rng.permutation(len(ids))
            losses = []
            for start in range(0, len(order), cfg.batch_size):
                sel = order[start : start + cfg.batch_size]
                tl = teacher[sel] if teacher is not None else None
                grads, loss, _ = _backward_stacked(
                    stacked, xn[sel], labels[sel], tl, kd if tl is not None else None
                )
                if not np.isfinite(loss):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch}, batch offset {start}"
                    )
                opt.step(stacked, grads)
                losses.append(loss)
            record = {
                "epoch": epoch,
                "mean_loss": float(np.mean(losses)),
                "val_mcc": None,
                "wall_ms": round((time.perf_counter() - t0) * 1000.0, 3),
            }
            if val_x is not None:
                current = _unstack(stacked, arch, norm)
                preds = predict_batch_float(current, val_x)
                record["val_mcc"] = mcc_multiclass(
                    confusion(preds, val_y, arch.num_classes)
                )
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
    finally:
        if log_fh:
            log_fh.close()

    return _unstack(stacked, arch, norm)
