"""Binary field files and run manifests.

Format (all little-endian): magic "MGRF", version u32, then d, p, m1, m2
(u32 each, m2 = 1 for d = 1), spacing as f64, seed as u64, replicate u32,
construction tag u8 (0 spectral, 1 convolution, 2 markov), followed by
p * m1 * m2 f64 field values in component-major, row-major order.  The
header is exactly 45 bytes.
"""

import hashlib
import json
import struct

import numpy as np

from .errors import FormatError
from .grid import GridSpec
from .simulate import Realization

MAGIC = b"MGRF"
VERSION = 1
HEADER = struct.Struct("<4sIIIIIdQIB")  # 45 bytes
TAG_OF = {"spectral": 0, "convolution": 1, "markov": 2}
NAME_OF = {v: k for k, v in TAG_OF.items()}

HEADER_BYTES = 45
assert HEADER.size == HEADER_BYTES


def write_field(path, realization):
    r = realization
    m1 = r.grid.sizes[0]
    m2 = r.grid.sizes[1] if r.grid.d == 2 else 1
    header = HEADER.pack(
        MAGIC, VERSION, r.grid.d, r.p, m1, m2,
        float(r.grid.spacing), int(r.seed) & (2**64 - 1), int(r.replicate),
        TAG_OF[r.construction],
    )
    payload = np.ascontiguousarray(r.values, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_field(path, periodic=None):
    """Read a field file back into a Realization.

    ``periodic`` overrides the grid periodicity flag, which the format does
    not store; by default markov fields load as non-periodic grids and the
    other constructions as periodic.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER_BYTES:
        raise FormatError(f"file too short for a header: {len(raw)} bytes")
    magic, version, d, p, m1, m2, spacing, seed, replicate, tag = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}")
    if tag not in NAME_OF:
        raise FormatError(f"unknown construction tag byte {tag}")
    if d not in (1, 2):
        raise FormatError(f"unsupported dimension {d}")
    count = p * m1 * m2
    expected = HEADER_BYTES + 8 * count
    if len(raw) != expected:
        raise FormatError(f"expected {expected} bytes, file has {len(raw)}")
    values = np.frombuffer(raw, dtype="<f8", offset=HEADER_BYTES, count=count).copy()
    sizes = (m1, m2) if d == 2 else (m1,)
    construction = NAME_OF[tag]
    if periodic is None:
        periodic = construction != "markov"
    grid = GridSpec(d=d, sizes=sizes, spacing=spacing, periodic=periodic)
    return Realization(
        grid=grid,
        values=values.reshape((p,) + sizes),
        seed=seed,
        replicate=replicate,
        construction=construction,
    )


def config_hash(config):
    """Stable hash of a config document (sorted-key JSON, sha256)."""
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def write_manifest(path, *, config, outputs, seed=None, extra=None):
    from . import __version__

    doc = {
        "config": config,
        "config_hash": config_hash(config),
        "code_version": __version__,
        "seed": seed,
        "outputs": [str(o) for o in outputs],
    }
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return doc
