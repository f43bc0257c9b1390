"""Memory queues of past weights/embeddings reused as virtual classes.

Snapshots of the class-weight matrix and of the (embeddings, labels) of each
training step are pushed newest-first into two bounded queues. At every
active step, the snapshots at newest-first indices ``M, 2M+1, 3M+2, ...`` are
appended to the current batch as extra classes whose ids are shifted by
``slot * C``. The queues are filled after selection, so the number of virtual
snapshots grows by one every ``M+1`` steps until it saturates at ``N``.
"""

import enum
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, List, Tuple

import numpy as np

from .losses import LossConfig, LossOutput, loss_forward

STATE_FORMAT_VERSION = 1


class DimensionMismatch(ValueError):
    pass


class Mode(str, enum.Enum):
    FULL = "Full"
    NO_WARMUP = "NoWarmup"
    NO_STEP_PACING = "NoStepPacing"
    BASELINE = "Baseline"


@dataclass(frozen=True)
class MemVirConfig:
    """MemVir(N, M) with warm-up ``U`` (in steps) and a scheduling mode."""

    n_steps: int = 5
    margin: int = 100
    warmup_step: int = 0
    mode: Mode = Mode.FULL

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        for name in ("n_steps", "margin", "warmup_step"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {value!r}")

    @property
    def capacity(self) -> int:
        return self.n_steps * (self.margin + 1)

    @property
    def effective_warmup(self) -> int:
        return 0 if self.mode is Mode.NO_WARMUP else self.warmup_step

    def is_active(self, step: int) -> bool:
        return self.mode is not Mode.BASELINE and step >= self.effective_warmup


def _frozen(a, dtype=np.float64):
    out = np.array(a, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass
class MemVirState:
    """Both queues (index 0 = newest) and the number of training steps taken."""

    weight_queue: Deque[np.ndarray] = field(default_factory=deque)
    embed_queue: Deque[Tuple[np.ndarray, np.ndarray]] = field(default_factory=deque)
    step: int = 0

    def __len__(self):
        return len(self.weight_queue)

    def save(self, path):
        """Write both queues and the step counter to an ``.npz`` file."""
        arrays = {}
        for i, w in enumerate(self.weight_queue):
            arrays[f"weight_{i}"] = w
        for i, (x, y) in enumerate(self.embed_queue):
            arrays[f"embed_{i}"] = x
            arrays[f"label_{i}"] = y
        header = {"version": STATE_FORMAT_VERSION, "step": self.step, "length": len(self)}
        arrays["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
        if hasattr(path, "write"):
            np.savez(path, **arrays)
        else:
            with open(path, "wb") as fh:
                np.savez(fh, **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            header = json.loads(bytes(data["header"]).decode())
            if header.get("version") != STATE_FORMAT_VERSION:
                raise ValueError(f"unsupported MemVir state version {header.get('version')}")
            n = header["length"]
            state = cls(step=int(header["step"]))
            for i in range(n):
                state.weight_queue.append(_frozen(data[f"weight_{i}"]))
                state.embed_queue.append((_frozen(data[f"embed_{i}"]), _frozen(data[f"label_{i}"], np.int64)))
        return state


@dataclass
class VirtualBatch:
    embeddings: np.ndarray
    weights: np.ndarray
    labels: np.ndarray
    k: int
    indices: List[int] = field(default_factory=list)


def schedule_class_count(i, C, U, N, M):
    """Number of classes seen at step ``i`` under the staircase schedule."""
    if i < U:
        return C
    return C * (min((i - U) // (M + 1), N) + 1)


def enqueue_step(state: MemVirState, cfg: MemVirConfig, W, X, y) -> MemVirState:
    """Push immutable copies of (W, X, y) at the front; drop the oldest past capacity."""
    state.weight_queue.appendleft(_frozen(W))
    state.embed_queue.appendleft((_frozen(X), _frozen(y, np.int64)))
    while len(state.weight_queue) > cfg.capacity:
        state.weight_queue.pop()
        state.embed_queue.pop()
    return state


def selection_indices(queue_len, cfg: MemVirConfig):
    """Newest-first queue indices whose snapshots become virtual classes."""
    M = cfg.margin
    if cfg.mode is Mode.BASELINE or queue_len <= M:
        return []
    if cfg.mode is Mode.NO_STEP_PACING and queue_len < cfg.capacity:
        return []
    return list(range(M, queue_len, M + 1))[: cfg.n_steps]


def select_virtual(state: MemVirState, cfg: MemVirConfig, C, D=None) -> VirtualBatch:
    idx = selection_indices(len(state), cfg)
    if not idx:
        if D is None:
            D = state.weight_queue[0].shape[0] if len(state) else 0
        return VirtualBatch(np.zeros((0, D)), np.zeros((D, 0)), np.zeros(0, dtype=np.int64), 0, [])
    xs, ws, ys = [], [], []
    for slot, i in enumerate(idx, start=1):
        w = state.weight_queue[i]
        x, y = state.embed_queue[i]
        if w.shape[1] != C:
            raise DimensionMismatch(f"snapshot {i} has {w.shape[1]} classes, expected {C}")
        ws.append(w)
        xs.append(x)
        ys.append(y + slot * C)
    return VirtualBatch(np.vstack(xs), np.hstack(ws), np.concatenate(ys), len(idx), idx)


def assemble_extended_batch(X, y, W, virt: VirtualBatch):
    """Stack current and virtual embeddings/weights, current first."""
    X = np.asarray(X, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if virt.k == 0:
        return X, W, y
    if virt.embeddings.shape[1] != X.shape[1] or virt.weights.shape[0] != W.shape[0]:
        raise DimensionMismatch(
            f"virtual dims {virt.embeddings.shape[1]}/{virt.weights.shape[0]} vs current {X.shape[1]}/{W.shape[0]}"
        )
    if virt.weights.shape[1] != virt.k * W.shape[1]:
        raise DimensionMismatch(f"{virt.weights.shape[1]} virtual columns for k={virt.k}, C={W.shape[1]}")
    return (
        np.vstack([X, virt.embeddings]),
        np.hstack([W, virt.weights]),
        np.concatenate([y, virt.labels]),
    )


@dataclass
class StepResult:
    """Loss and gradients restricted to the current step's X and W."""

    loss: LossOutput
    n_classes: int
    n_rows: int
    k: int
    distinct_labels: int


def memvir_training_step(state: MemVirState, cfg: MemVirConfig, X, y, W, loss_cfg: LossConfig) -> StepResult:
    """One step of the MemVir flow on already-computed embeddings.

    Copies the current (W, X, y), selects virtual snapshots, assembles the
    extended batch, enqueues the copies, then evaluates the loss. Gradients
    for queued rows/columns are dropped since snapshots are constants.
    ``state.step`` advances by one on every call, active or not.
    """
    X = np.asarray(X, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    B, C = X.shape[0], W.shape[1]

    if not cfg.is_active(state.step):
        out = loss_forward(loss_cfg, X, y, W)
        state.step += 1
        return StepResult(out, C, B, 0, int(np.unique(y).size))

    virt = select_virtual(state, cfg, C, X.shape[1])
    X_ext, W_ext, y_ext = assemble_extended_batch(X, y, W, virt)
    enqueue_step(state, cfg, W, X, y)
    out = loss_forward(loss_cfg, X_ext, y_ext, W_ext)
    if virt.k:
        out = LossOutput(out.value, out.d_embeddings[:B], out.d_weights[:, :C], out.curricular_t)
    state.step += 1
    return StepResult(out, W_ext.shape[1], X_ext.shape[0], virt.k, int(np.unique(y_ext).size))
