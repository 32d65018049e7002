"""AdamW training loop with warmup/decay schedule and bit-exact checkpoints."""

from __future__ import annotations

import hashlib
import io
import json
import logging
import os
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .featurizer import EncodedWindow, labeled, stack
from .model import ModelConfig, ModelParams, forward_backward, init_params, is_no_decay

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"CONVQA\x00\x01"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int
    lr: float = 3e-5
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    warmup_fraction: float = 0.1
    batch_size: int = 12
    checkpoint_every: int = 1000
    clip_norm: float | None = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must be in [0, 1)")
        if self.total_steps < 1 or self.batch_size < 1 or self.checkpoint_every < 1:
            raise ValueError("total_steps, batch_size and checkpoint_every must be >= 1")


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def lr_at(step: float, config: TrainConfig) -> float:
    """Linear warmup from 0 to ``config.lr``, then linear decay to 0 at ``total_steps``."""
    total = config.total_steps
    warmup = config.warmup_fraction * total
    if step < warmup:
        return config.lr * step / warmup
    return config.lr * max(total - step, 0.0) / (total - warmup)


def adamw_step(
    params: ModelParams,
    grads: ModelParams,
    state: OptimizerState,
    lr_t: float,
    config: TrainConfig,
) -> tuple[ModelParams, OptimizerState]:
    """One Adam update with decoupled weight decay, applied in place."""
    b1, b2 = config.betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + config.eps)
        if config.weight_decay and not is_no_decay(name):
            update = update + config.weight_decay * p
        p -= (lr_t * update).astype(p.dtype)
        if not np.all(np.isfinite(p)):
            raise FloatingPointError(f"non-finite parameter after update: {name}")
    return params, state


def clip_by_global_norm(grads: ModelParams, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        for g in grads.values():
            g *= scale
    return norm


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: ModelParams
    optimizer: OptimizerState
    train_config: TrainConfig
    step: int
    rng_state: dict[str, Any]
    data_order: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    data_pos: int = 0
    metadata: dict[str, Any] = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION


def _tensor_record(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    dtype = arr.dtype.newbyteorder("<").str
    data = arr.astype(dtype, copy=False).tobytes()
    name_b = name.encode()
    out = struct.pack("<H", len(name_b)) + name_b
    out += struct.pack("<B", len(dtype)) + dtype.encode()
    out += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return out + struct.pack("<Q", len(data)) + data


def checkpoint_bytes(ckpt: Checkpoint, version: int | None = None) -> bytes:
    header = {
        "model_config": ckpt.model_config.to_dict(),
        "train_config": asdict(ckpt.train_config),
        "step": ckpt.step,
        "optimizer_step": ckpt.optimizer.step,
        "rng_state": ckpt.rng_state,
        "data_pos": ckpt.data_pos,
        "metadata": ckpt.metadata,
    }
    header_b = json.dumps(header, sort_keys=True).encode()
    tensors = [("data_order", np.asarray(ckpt.data_order, dtype=np.int64))]
    for name in ckpt.params:
        tensors.append(("param/" + name, ckpt.params[name]))
        tensors.append(("adam_m/" + name, ckpt.optimizer.m[name]))
        tensors.append(("adam_v/" + name, ckpt.optimizer.v[name]))
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", ckpt.version if version is None else version))
    buf.write(struct.pack("<Q", len(header_b)))
    buf.write(header_b)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        buf.write(_tensor_record(name, arr))
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    """Atomic write: temp file in the same directory, then rename."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(ckpt))
    os.replace(tmp, path)


def _read(buf: memoryview, pos: int, fmt: str):
    size = struct.calcsize(fmt)
    if pos + size > len(buf):
        raise CheckpointError("checkpoint truncated")
    return struct.unpack_from(fmt, buf, pos), pos + size


def parse_checkpoint(raw: bytes) -> Checkpoint:
    if len(raw) < len(CHECKPOINT_MAGIC) + 4 or not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", raw, len(CHECKPOINT_MAGIC))
    if version > CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {version} is newer than supported version {CHECKPOINT_VERSION}"
        )
    if version < 1:
        raise CheckpointVersionError(f"unknown checkpoint version {version}")
    body, digest = raw[:-32], raw[-32:]
    if len(raw) < 44 or hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch (file corrupt or truncated)")

    buf = memoryview(body)
    pos = len(CHECKPOINT_MAGIC) + 4
    (hlen,), pos = _read(buf, pos, "<Q")
    header = json.loads(bytes(buf[pos : pos + hlen]))
    pos += hlen
    (count,), pos = _read(buf, pos, "<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,), pos = _read(buf, pos, "<H")
        name = bytes(buf[pos : pos + nlen]).decode()
        pos += nlen
        (dlen,), pos = _read(buf, pos, "<B")
        dtype = bytes(buf[pos : pos + dlen]).decode()
        pos += dlen
        (ndim,), pos = _read(buf, pos, "<B")
        shape, pos = _read(buf, pos, f"<{ndim}Q")
        (nbytes,), pos = _read(buf, pos, "<Q")
        arr = np.frombuffer(bytes(buf[pos : pos + nbytes]), dtype=np.dtype(dtype)).reshape(shape)
        pos += nbytes
        tensors[name] = arr.astype(arr.dtype.newbyteorder("="))

    params, m, v = {}, {}, {}
    for name, arr in tensors.items():
        kind, _, pname = name.partition("/")
        {"param": params, "adam_m": m, "adam_v": v}.get(kind, {})[pname] = arr
    tc = header["train_config"]
    return Checkpoint(
        model_config=ModelConfig(**header["model_config"]),
        params=params,
        optimizer=OptimizerState(m=m, v=v, step=header["optimizer_step"]),
        train_config=TrainConfig(**tc),
        step=header["step"],
        rng_state=header["rng_state"],
        data_order=tensors["data_order"],
        data_pos=header["data_pos"],
        metadata=header["metadata"],
        version=version,
    )


def load_checkpoint(path: str | Path) -> Checkpoint:
    return parse_checkpoint(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[dict[str, float]]
    checkpoint_paths: list[Path]


def _new_rng(state: dict | None, seed: int) -> np.random.Generator:
    rng = np.random.default_rng(seed)
    if state is not None:
        rng.bit_generator.state = state
    return rng


def train(
    windows: Sequence[EncodedWindow],
    model_config: ModelConfig,
    train_config: TrainConfig,
    out_dir: str | Path | None = None,
    resume: Checkpoint | None = None,
    metadata: dict[str, Any] | None = None,
    on_step: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train on the labeled subset of ``windows``.

    When ``out_dir`` is given, checkpoints ``ckpt-<step>.bin`` are written every
    ``checkpoint_every`` steps and at the end, the per-step ``metrics.jsonl``
    (step, lr, loss) is appended to, and wall-clock timings go to ``timing.jsonl``.
    """
    data = labeled(windows)
    if not data:
        raise TrainingError(
            "every window was dropped: no gold span fits inside a window; "
            "increase max_seq_len or shorten max_question_len"
        )
    tc = train_config
    if resume is not None:
        params = {k: v.copy() for k, v in resume.params.items()}
        opt = OptimizerState(
            m={k: v.copy() for k, v in resume.optimizer.m.items()},
            v={k: v.copy() for k, v in resume.optimizer.v.items()},
            step=resume.optimizer.step,
        )
        step = resume.step
        rng = _new_rng(resume.rng_state, tc.seed)
        order = np.array(resume.data_order, dtype=np.int64)
        pos = resume.data_pos
        metadata = {**resume.metadata, **(metadata or {})}
    else:
        params = init_params(model_config)
        opt = OptimizerState.zeros_like(params)
        step = 0
        rng = _new_rng(None, tc.seed)
        order = np.zeros(0, dtype=np.int64)
        pos = 0
        metadata = dict(metadata or {})
    if len(order) and (len(order) != len(data) or order.max() >= len(data)):
        raise TrainingError("checkpoint data order does not match the training set")

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    log: list[dict[str, float]] = []
    paths: list[Path] = []

    def snapshot() -> Checkpoint:
        return Checkpoint(
            model_config=model_config,
            params={k: v.copy() for k, v in params.items()},
            optimizer=OptimizerState(
                m={k: v.copy() for k, v in opt.m.items()},
                v={k: v.copy() for k, v in opt.v.items()},
                step=opt.step,
            ),
            train_config=tc,
            step=step,
            rng_state=rng.bit_generator.state,
            data_order=order.copy(),
            data_pos=pos,
            metadata=metadata,
        )

    metrics_fh = open(out / "metrics.jsonl", "a") if out is not None else None
    timing_fh = open(out / "timing.jsonl", "a") if out is not None else None
    try:
        while step < tc.total_steps:
            t0 = time.perf_counter()
            if pos >= len(order):
                order = rng.permutation(len(data))
                pos = 0
            idx = order[pos : pos + tc.batch_size]
            pos += len(idx)
            batch = stack([data[i] for i in idx])
            loss, grads = forward_backward(batch, params, model_config, rng)
            if tc.clip_norm is not None:
                clip_by_global_norm(grads, tc.clip_norm)
            lr = lr_at(step, tc)
            adamw_step(params, grads, opt, lr, tc)
            step += 1
            record = {"step": step, "lr": lr, "loss": loss}
            log.append(record)
            if on_step is not None:
                on_step(record)
            if metrics_fh is not None:
                metrics_fh.write(json.dumps(record) + "\n")
                wall_ms = (time.perf_counter() - t0) * 1e3
                timing_fh.write(json.dumps({"step": step, "wall_ms": round(wall_ms, 3)}) + "\n")
                if step % tc.checkpoint_every == 0 or step == tc.total_steps:
                    path = out / f"ckpt-{step}.bin"
                    save_checkpoint(path, snapshot())
                    paths.append(path)
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
            timing_fh.close()
    return TrainResult(checkpoint=snapshot(), log=log, checkpoint_paths=paths)
