"""Binary checkpoints: parameters, optimizer velocity, step counter and rng state.

Layout (little-endian)::

    b"GVRN" | u32 version | u32 n | config JSON (n bytes) | u64 step
    | u32 n | index JSON: [[name, offset, shape], ...] | u32 n | rng state JSON
    | u64 count | count float64 values

JSON is written with sorted keys and no whitespace, so saving the same state
twice yields the same bytes.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"GVRN"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: dict
    step: int
    arrays: dict[str, np.ndarray]
    rng_state: dict = field(default_factory=dict)

    def params(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.arrays.items() if not k.startswith("opt.")}

    def velocity(self) -> dict[str, np.ndarray]:
        return {k[4:]: v for k, v in self.arrays.items() if k.startswith("opt.")}


def _dump(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode(ck: Checkpoint) -> bytes:
    index, chunks, offset = [], [], 0
    for name in sorted(ck.arrays):
        a = np.ascontiguousarray(ck.arrays[name], dtype="<f8")
        index.append([name, offset, list(a.shape)])
        chunks.append(a.tobytes())
        offset += a.size
    parts = [MAGIC, struct.pack("<I", VERSION)]
    for blob in (_dump(ck.config),):
        parts += [struct.pack("<I", len(blob)), blob]
    parts.append(struct.pack("<Q", ck.step))
    for blob in (_dump(index), _dump(ck.rng_state)):
        parts += [struct.pack("<I", len(blob)), blob]
    parts.append(struct.pack("<Q", offset))
    parts += chunks
    return b"".join(parts)


class _Reader:
    def __init__(self, raw: bytes, source: str):
        self.raw, self.pos, self.source = raw, 0, source

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.source}: truncated while reading {what}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))[0]

    def json(self, what: str):
        n = self.unpack("<I", f"{what} length")
        try:
            return json.loads(self.take(n, what).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"{self.source}: corrupt {what}: {e}") from None


def decode(raw: bytes, source: str = "<bytes>") -> Checkpoint:
    r = _Reader(raw, source)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    version = r.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version}")
    config = r.json("config")
    step = r.unpack("<Q", "step")
    index = r.json("index")
    rng_state = r.json("rng state")
    count = r.unpack("<Q", "buffer length")
    buf = np.frombuffer(r.take(8 * count, "parameter buffer"), dtype="<f8")
    if r.pos != len(raw):
        raise CheckpointError(f"{source}: {len(raw) - r.pos} trailing bytes after buffer")
    arrays, expect = {}, 0
    for name, offset, shape in index:
        size = int(np.prod(shape)) if shape else 1
        if offset != expect:
            raise CheckpointError(f"{source}: extent of {name!r} starts at {offset}, expected {expect}")
        arrays[name] = buf[offset:offset + size].reshape(shape).astype(np.float64)
        expect += size
    if expect != count:
        raise CheckpointError(f"{source}: index covers {expect} values but buffer holds {count}")
    return Checkpoint(config, step, arrays, rng_state)


def save(path, ck: Checkpoint) -> None:
    Path(path).write_bytes(encode(ck))


def load(path) -> Checkpoint:
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"missing checkpoint {p}")
    return decode(p.read_bytes(), str(p))


# ---------------------------------------------------------------- model glue

def snapshot(trainer) -> Checkpoint:
    """Capture a :class:`~beliefnet.train.Trainer` (params, velocity, step, rng)."""
    arrays = {n: t.data for n, t in trainer.params.named().items()}
    arrays.update({f"opt.{n}": v for n, v in trainer.opt.velocity.items()})
    config = {"model": _model_cfg(trainer.params.cfg), "train": asdict(trainer.cfg)}
    return Checkpoint(config, trainer.step, arrays, trainer.rng.bit_generator.state)


def _model_cfg(cfg) -> dict:
    d = asdict(cfg)
    d["channels"] = list(d["channels"])
    d["resolution"] = list(d["resolution"])
    return d


def model_from(ck: Checkpoint):
    """Rebuild :class:`ModelParams` from a checkpoint."""
    from .model import ModelConfig, init_params

    mc = dict(ck.config["model"])
    mc["channels"] = tuple(mc["channels"])
    mc["resolution"] = tuple(mc["resolution"])
    params = init_params(ModelConfig(**mc), seed=0)
    named = params.named()
    stored = ck.params()
    if set(stored) != set(named):
        missing = sorted(set(named) ^ set(stored))
        raise CheckpointError(f"checkpoint parameters do not match the model: {missing[:5]}")
    for n, t in named.items():
        if stored[n].shape != t.data.shape:
            raise CheckpointError(f"{n}: stored shape {stored[n].shape} != model shape {t.data.shape}")
        t.data[...] = stored[n]
    return params


def trainer_from(ck: Checkpoint, data):
    """Resume a trainer: parameters, velocity, step counter and batch rng."""
    from .train import TrainConfig, Trainer

    tr = Trainer(model_from(ck), data, TrainConfig(**ck.config["train"]))
    for n, v in ck.velocity().items():
        if n in tr.opt.velocity:
            tr.opt.velocity[n][...] = v
    tr.step = ck.step
    tr.rng.bit_generator.state = ck.rng_state
    return tr
