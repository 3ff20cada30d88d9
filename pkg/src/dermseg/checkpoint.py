"""Bit-exact checkpoint serialization.

Layout (all integers little-endian):

    magic   b"LSG1"
    version u32 (currently 1)
    digest  32 bytes, sha256 of the canonical architecture description
    meta    u32 length + UTF-8 JSON: the architecture itself, optimizer
            scalars, and training metadata
    params  u32 record count, then records
    opt     u32 record count, then records (first/second moments, named
            "m.<param>" / "v.<param>")

Each record is: u32 name length, name bytes, 4 dims as u32 (lower-rank
arrays are padded with leading 1s, so a per-channel vector is stored as
(1, 1, 1, c)), then the payload as little-endian float32.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import ArchSpec, Network, build
from .optim import AdamState

MAGIC = b"LSG1"
VERSION = 1


def _pack_record(name: str, arr: np.ndarray) -> bytes:
    data = np.ascontiguousarray(arr, dtype="<f4")
    dims = (1,) * (4 - data.ndim) + data.shape
    if len(dims) != 4:
        raise CheckpointError(f"{name}: rank {data.ndim} not storable")
    raw = name.encode("utf-8")
    return (
        struct.pack("<I", len(raw))
        + raw
        + struct.pack("<4I", *dims)
        + data.tobytes()
    )


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError("truncated checkpoint file")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def record(self) -> tuple[str, np.ndarray]:
        name = self.take(self.u32()).decode("utf-8")
        dims = struct.unpack("<4I", self.take(16))
        count = int(np.prod(dims))
        data = np.frombuffer(self.take(count * 4), dtype="<f4").reshape(dims)
        return name, data.astype(np.float32)


def save(net: Network, path, optimizer_state: AdamState | None = None,
         meta: dict | None = None) -> None:
    """Write the network (parameters + running statistics), optimizer
    moments, and metadata; the round trip is bit-exact."""
    spec = net.spec
    meta_doc = {
        "spec": spec.to_dict(),
        "rng_seed": net.rng_seed,
        "train_meta": meta or {},
        "adam": None,
    }
    opt_records: dict[str, np.ndarray] = {}
    if optimizer_state is not None:
        meta_doc["adam"] = {
            "lr": optimizer_state.lr,
            "beta1": optimizer_state.beta1,
            "beta2": optimizer_state.beta2,
            "epsilon": optimizer_state.epsilon,
            "t": optimizer_state.t,
            "clip_norm": optimizer_state.clip_norm,
        }
        for name, arr in optimizer_state.m.items():
            opt_records[f"m.{name}"] = arr
        for name, arr in optimizer_state.v.items():
            opt_records[f"v.{name}"] = arr

    meta_raw = json.dumps(meta_doc, sort_keys=True).encode("utf-8")
    params = net.state_arrays()

    chunks = [MAGIC, struct.pack("<I", VERSION), spec.digest(),
              struct.pack("<I", len(meta_raw)), meta_raw,
              struct.pack("<I", len(params))]
    chunks.extend(_pack_record(n, a) for n, a in params.items())
    chunks.append(struct.pack("<I", len(opt_records)))
    chunks.extend(_pack_record(n, a) for n, a in opt_records.items())

    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


def _expected_shapes(spec: ArchSpec) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    c_in = spec.in_channels
    for layer in spec.layers:
        shapes[f"{layer.name}.weight"] = (layer.out_channels, c_in,
                                          layer.kernel, layer.kernel)
        if layer.batch_norm:
            for field in ("gamma", "beta", "running_mean", "running_var"):
                shapes[f"{layer.name}.{field}"] = (layer.out_channels,)
        else:
            shapes[f"{layer.name}.bias"] = (layer.out_channels,)
        c_in = layer.out_channels
    return shapes


def load(path, expected_spec: ArchSpec | None = None):
    """Read a checkpoint back into (Network, AdamState | None, meta dict).

    Raises :class:`CheckpointError` on bad magic/version, truncation,
    digest mismatch, or shapes that disagree with the architecture."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    digest = r.take(32)
    try:
        meta_doc = json.loads(r.take(r.u32()).decode("utf-8"))
        spec = ArchSpec.from_dict(meta_doc["spec"])
    except CheckpointError:
        raise
    except Exception as exc:
        raise CheckpointError(f"{path}: unreadable metadata ({exc})") from exc
    if spec.digest() != digest:
        raise CheckpointError(f"{path}: architecture digest mismatch")
    if expected_spec is not None and expected_spec.digest() != digest:
        raise CheckpointError(
            f"{path}: checkpoint belongs to a different architecture "
            "(parameter shapes would not match)"
        )

    expected = _expected_shapes(spec)
    net = build(spec, int(meta_doc.get("rng_seed", 0)))
    arrays = net.state_arrays()

    seen = set()
    for _ in range(r.u32()):
        name, data = r.record()
        if name not in expected:
            raise CheckpointError(f"{path}: unexpected parameter {name!r}")
        want = expected[name]
        want_dims = (1,) * (4 - len(want)) + want
        if tuple(data.shape) != want_dims:
            raise CheckpointError(
                f"{path}: {name} has shape {data.shape}, spec wants {want}"
            )
        arrays[name][...] = data.reshape(want)
        seen.add(name)
    missing = set(expected) - seen
    if missing:
        raise CheckpointError(f"{path}: missing parameters {sorted(missing)}")

    opt_state = None
    adam_meta = meta_doc.get("adam")
    n_opt = r.u32()
    opt_arrays: dict[str, np.ndarray] = {}
    for _ in range(n_opt):
        name, data = r.record()
        opt_arrays[name] = data
    if adam_meta is not None:
        opt_state = AdamState(
            lr=float(adam_meta["lr"]),
            beta1=float(adam_meta["beta1"]),
            beta2=float(adam_meta["beta2"]),
            epsilon=float(adam_meta["epsilon"]),
            t=int(adam_meta["t"]),
            clip_norm=float(adam_meta.get("clip_norm", 0.0)),
        )
        params = net.parameters()
        for name, param in params.items():
            for prefix, store in (("m", opt_state.m), ("v", opt_state.v)):
                key = f"{prefix}.{name}"
                if key in opt_arrays:
                    arr = opt_arrays[key].reshape(param.shape)
                    store[name] = arr.astype(np.float32)
    return net, opt_state, meta_doc.get("train_meta", {})
