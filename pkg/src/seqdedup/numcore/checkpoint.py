"""Checkpoint serialization.

Layout: a text header followed by one flat little-endian float64 payload.

    SEQDEDUP-CKPT-1
    meta <key>=<value>
    param name=<name> shape=<d0,d1,...> offset=<elements>
    ...
    data
    <raw float64 bytes, little endian, concatenated in manifest order>

Offsets count float64 elements from the start of the payload. Meta keys and
values must not contain whitespace or '='.
"""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .tensor import Parameter

CKPT_MAGIC = "SEQDEDUP-CKPT-1"


def save_checkpoint(path, params, meta=None) -> None:
    """Write named tensors plus string metadata to `path`."""
    meta = dict(meta or {})
    lines = [CKPT_MAGIC]
    for k, v in meta.items():
        k, v = str(k), str(v)
        if any(c.isspace() or c == "=" for c in k) or any(c.isspace() for c in v):
            raise ValueError(f"bad meta entry {k!r}={v!r}")
        lines.append(f"meta {k}={v}")
    chunks = []
    offset = 0
    seen = set()
    for p in params:
        if p.name in seen:
            raise ValueError(f"duplicate parameter name {p.name!r}")
        seen.add(p.name)
        shape = ",".join(str(d) for d in p.data.shape) or "0"
        lines.append(f"param name={p.name} shape={shape} offset={offset}")
        flat = np.ascontiguousarray(p.data, dtype="<f8")
        chunks.append(flat.tobytes())
        offset += p.data.size
    lines.append("data")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for c in chunks:
            fh.write(c)


def load_checkpoint(path):
    """Read a checkpoint; returns (OrderedDict name -> ndarray, meta dict)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header, _, payload = blob.partition(b"\ndata\n")
    if payload == b"" and not blob.endswith(b"\ndata\n"):
        raise ValueError(f"{path}: missing data section")
    lines = header.decode("ascii").splitlines()
    if not lines or lines[0] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a {CKPT_MAGIC} checkpoint")
    meta: dict[str, str] = {}
    entries = []
    for line in lines[1:]:
        kind, _, rest = line.partition(" ")
        if kind == "meta":
            k, _, v = rest.partition("=")
            meta[k] = v
        elif kind == "param":
            fields = dict(part.split("=", 1) for part in rest.split(" "))
            shape = tuple(int(d) for d in fields["shape"].split(",") if fields["shape"] != "0")
            entries.append((fields["name"], shape, int(fields["offset"])))
        else:
            raise ValueError(f"{path}: unknown manifest line {line!r}")
    values = np.frombuffer(payload, dtype="<f8")
    tensors: OrderedDict[str, np.ndarray] = OrderedDict()
    for name, shape, offset in entries:
        size = int(np.prod(shape)) if shape else 0
        if offset + size > values.size:
            raise ValueError(f"{path}: payload too short for parameter {name!r}")
        tensors[name] = values[offset : offset + size].reshape(shape).astype(np.float64)
    return tensors, meta


def restore_params(params, tensors) -> None:
    """Load values into existing Parameters by name; shapes must match."""
    for p in params:
        if p.name not in tensors:
            raise KeyError(f"checkpoint is missing parameter {p.name!r}")
        value = tensors[p.name]
        if value.shape != p.data.shape:
            raise ValueError(
                f"shape mismatch for {p.name!r}: checkpoint {value.shape}, model {p.data.shape}"
            )
        p.data = value.copy()
        p.grad = None
