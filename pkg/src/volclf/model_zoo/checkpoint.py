"""Serialized parameter sets.

File layout (``VOLCKPT 1``)::

    VOLCKPT 1\\n
    digest <sha256 of the ModelSpec>\\n
    meta <key>=<value>\\n          (zero or more, UTF-8)
    records <count>\\n
    then per tensor: u32 name length, name bytes, u32 rank, rank x u32
    extents, little-endian float32 payload.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from volclf.errors import ConfigurationError, FormatError, TransferError
from volclf.model_zoo.network import Network, init_parameters, buffer_shapes
from volclf.model_zoo.spec import ModelSpec

MAGIC = "VOLCKPT 1"
_U32 = struct.Struct("<I")


@dataclass
class Checkpoint:
    digest: str
    tensors: dict[str, np.ndarray]
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        ba = self.metadata.get("valid_ba")
        if ba not in (None, "", "nan"):
            value = float(ba)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"validation BA {value} outside [0, 1]")

    @classmethod
    def from_network(cls, net: Network, **metadata) -> Checkpoint:
        return cls(net.spec.digest(), net.state_dict(), {k: str(v) for k, v in metadata.items()})

    def check_matches(self, spec: ModelSpec) -> None:
        if self.digest != spec.digest():
            raise TransferError(f"checkpoint digest {self.digest[:12]} does not match model {spec.digest()[:12]}")

    def load_into(self, net: Network) -> None:
        self.check_matches(net.spec)
        net.load_state_dict(self.tensors)

    def to_network(self, spec: ModelSpec, dtype=np.float32) -> Network:
        net = Network(spec, seed=0, dtype=dtype)
        self.load_into(net)
        return net

    def parameters_equal(self, other: Checkpoint) -> bool:
        if set(self.tensors) != set(other.tensors):
            return False
        return all(np.array_equal(self.tensors[k], other.tensors[k]) for k in self.tensors)


def save_checkpoint(path: str | os.PathLike, ckpt: Checkpoint) -> None:
    lines = [MAGIC, f"digest {ckpt.digest}"]
    for key in sorted(ckpt.metadata):
        value = str(ckpt.metadata[key])
        if "\n" in value or "\n" in key or "=" in key:
            raise ConfigurationError(f"metadata entry {key!r} cannot be serialized")
        lines.append(f"meta {key}={value}")
    lines.append(f"records {len(ckpt.tensors)}")
    chunks = [("\n".join(lines) + "\n").encode("utf-8")]
    for name, arr in ckpt.tensors.items():
        raw = name.encode("utf-8")
        data = np.ascontiguousarray(arr, dtype="<f4")
        chunks.append(_U32.pack(len(raw)) + raw + _U32.pack(data.ndim))
        chunks.append(b"".join(_U32.pack(e) for e in data.shape))
        chunks.append(data.tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    blob = Path(path).read_bytes()
    pos = 0

    def line() -> str:
        nonlocal pos
        end = blob.find(b"\n", pos)
        if end < 0:
            raise FormatError(f"{path}: truncated header")
        text = blob[pos:end].decode("utf-8")
        pos = end + 1
        return text

    if line() != MAGIC:
        raise FormatError(f"{path}: not a {MAGIC} checkpoint")
    head = line()
    if not head.startswith("digest "):
        raise FormatError(f"{path}: missing digest line")
    digest = head[len("digest ") :]
    metadata = {}
    while True:
        text = line()
        if text.startswith("meta "):
            key, _, value = text[5:].partition("=")
            metadata[key] = value
        elif text.startswith("records "):
            count = int(text.split()[1])
            break
        else:
            raise FormatError(f"{path}: unexpected header line {text!r}")

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise FormatError(f"{path}: truncated payload")
        out = blob[pos : pos + n]
        pos += n
        return out

    tensors = {}
    for _ in range(count):
        (name_len,) = _U32.unpack(take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = _U32.unpack(take(4))
        shape = tuple(_U32.unpack(take(4))[0] for _ in range(rank))
        n = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - pos} trailing bytes")
    return Checkpoint(digest, tensors, metadata)


def transfer_encoder_weights(
    ae: Checkpoint, classifier: ModelSpec, seed: int = 0, source_experiment: str = ""
) -> Checkpoint:
    """Classifier checkpoint whose conv blocks come from an autoencoder's encoder.

    Everything outside the conv blocks is freshly initialized from ``seed``.
    """
    fresh = init_parameters(classifier, seed)
    for name, shape in buffer_shapes(classifier).items():
        fresh[name] = np.zeros(shape, np.float32) if name.endswith("running_mean") else np.ones(shape, np.float32)
    encoder_layers = {l.name for l in classifier.conv_block_layers()}
    copied = 0
    for name in fresh:
        layer = name.rsplit(".", 1)[0]
        if layer not in encoder_layers:
            continue
        if name not in ae.tensors:
            raise TransferError(f"autoencoder checkpoint has no tensor {name}")
        if ae.tensors[name].shape != fresh[name].shape:
            raise TransferError(f"{name}: encoder shape {ae.tensors[name].shape} != classifier {fresh[name].shape}")
        fresh[name] = ae.tensors[name].copy()
        copied += 1
    if copied == 0:
        raise TransferError("no encoder tensors were transferred")
    meta = {
        "transfer": "ae_pretrain",
        "transfer_source_digest": ae.digest,
        "transfer_source_experiment": source_experiment or ae.metadata.get("experiment", ""),
        "seed": str(seed),
    }
    return Checkpoint(classifier.digest(), fresh, meta)
