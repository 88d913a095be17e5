"""Self-describing float32 tensor container.

Layout: one UTF-8 JSON header line terminated by ``\\n``, followed by the raw
little-endian IEEE-754 binary32 payload in row-major order::

    {"dtype":"f32","shape":[2,3],"order":"row-major","endian":"little","kind":"irm_mel"}\\n
    <24 bytes>
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_DTYPE = np.dtype("<f4")


class ContainerError(ValueError):
    """Raised for malformed or truncated tensor containers."""


@dataclass
class TensorContainer:
    values: np.ndarray
    kind: str | None = None

    def header(self) -> dict:
        meta = {
            "dtype": "f32",
            "shape": [int(n) for n in np.shape(self.values)],
            "order": "row-major",
            "endian": "little",
        }
        if self.kind is not None:
            meta["kind"] = self.kind
        return meta

    def to_bytes(self) -> bytes:
        head = json.dumps(self.header(), separators=(",", ":")).encode("utf-8") + b"\n"
        payload = np.ascontiguousarray(self.values, dtype=_DTYPE).tobytes(order="C")
        return head + payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "TensorContainer":
        newline = data.find(b"\n")
        if newline < 0:
            raise ContainerError("missing header terminator")
        try:
            meta = json.loads(data[:newline].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ContainerError(f"unparseable header: {exc}") from exc
        if meta.get("dtype") != "f32" or meta.get("order") != "row-major" or meta.get("endian") != "little":
            raise ContainerError(f"unsupported container header {meta}")
        shape = meta.get("shape")
        if not isinstance(shape, list) or any(not isinstance(n, int) or n < 0 for n in shape):
            raise ContainerError(f"invalid shape {shape!r}")
        payload = data[newline + 1:]
        expected = 4 * math.prod(shape)
        if len(payload) != expected:
            raise ContainerError(f"payload has {len(payload)} bytes, header implies {expected}")
        values = np.frombuffer(payload, dtype=_DTYPE).reshape(shape).copy()
        return cls(values, meta.get("kind"))


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_tensor(path, values, kind=None) -> None:
    atomic_write_bytes(path, TensorContainer(np.asarray(values), kind).to_bytes())


def read_tensor(path) -> TensorContainer:
    return TensorContainer.from_bytes(Path(path).read_bytes())
