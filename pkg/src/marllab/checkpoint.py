"""Single-file tensor container with a text header and raw payload.

Layout, in order:

    MARL-CKPT v1\n                     magic and format version
    meta <compact json>\n              optional, at most one line
    tensor <name> f64 <ndim> <d0>...\n one line per tensor, saved order
    data\n                             header terminator
    <payload>                          little-endian float64, C order,
                                       concatenated in header order

Round trips are bit-exact: load(save(x)) returns identical bytes for
identical inputs, and tensor order is preserved.
"""

from __future__ import annotations

import hashlib
import json
import numpy as np

from .errors import ArtifactError

MAGIC = b"MARL-CKPT"
FORMAT_VERSION = 1


def _encode_meta(meta: dict) -> bytes:
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save(path, tensors: dict, meta: dict | None = None) -> None:
    """Write name -> float64 array mappings; names must be whitespace-free."""
    lines = [b"%s v%d" % (MAGIC, FORMAT_VERSION)]
    if meta is not None:
        lines.append(b"meta " + _encode_meta(meta))
    payloads = []
    for name, arr in tensors.items():
        if not name or any(c.isspace() for c in name):
            raise ArtifactError(f"invalid tensor name {name!r}")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        dims = " ".join(str(d) for d in arr.shape)
        header = f"tensor {name} f64 {arr.ndim}"
        if dims:
            header += f" {dims}"
        lines.append(header.encode("ascii"))
        payloads.append(arr.tobytes(order="C"))
    lines.append(b"data")
    blob = b"\n".join(lines) + b"\n" + b"".join(payloads)
    with open(path, "wb") as fh:
        fh.write(blob)


def load(path) -> tuple[dict, dict | None]:
    """Read a container; returns (ordered name -> array dict, meta or None)."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise ArtifactError(f"cannot read checkpoint {path}: {exc}") from exc

    try:
        header_end = blob.index(b"\ndata\n")
    except ValueError:
        raise ArtifactError(f"{path}: missing data marker")
    header_lines = blob[:header_end].split(b"\n")
    payload = blob[header_end + len(b"\ndata\n"):]

    first = header_lines[0].split()
    if len(first) != 2 or first[0] != MAGIC:
        raise ArtifactError(f"{path}: bad magic")
    if first[1] != b"v%d" % FORMAT_VERSION:
        raise ArtifactError(f"{path}: unsupported format version {first[1]!r}")

    meta = None
    specs = []
    for raw in header_lines[1:]:
        if raw.startswith(b"meta "):
            if meta is not None or specs:
                raise ArtifactError(f"{path}: misplaced meta line")
            try:
                meta = json.loads(raw[5:].decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise ArtifactError(f"{path}: bad meta line: {exc}") from exc
            continue
        parts = raw.split()
        if len(parts) < 4 or parts[0] != b"tensor" or parts[2] != b"f64":
            raise ArtifactError(f"{path}: malformed header line {raw!r}")
        name = parts[1].decode("ascii")
        ndim = int(parts[3])
        dims = tuple(int(p) for p in parts[4:])
        if len(dims) != ndim:
            raise ArtifactError(f"{path}: dim count mismatch in {raw!r}")
        specs.append((name, dims))

    tensors = {}
    offset = 0
    for name, dims in specs:
        count = int(np.prod(dims, dtype=np.int64)) if dims else 1
        nbytes = count * 8
        chunk = payload[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise ArtifactError(f"{path}: truncated payload for tensor {name!r}")
        tensors[name] = np.frombuffer(chunk, dtype="<f8").reshape(dims).copy()
        offset += nbytes
    if offset != len(payload):
        raise ArtifactError(f"{path}: {len(payload) - offset} trailing payload bytes")
    return tensors, meta


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
