"""Binary image containers and their JSON sidecars.

All integers and floats are little-endian; layouts are fixed:

``PROMCIMG`` complex measurement stack::

    magic 8s | version u16 | dtype u16 | Ne Nc Ny Nx u32*4 | payload

    payload: float32 (re, im) pairs, x fastest, then y, coil, encoding.

``PROMVMAP`` velocity map::

    magic 8s | version u16 | dtype u16 | Ny Nx u32*2 | float32 payload

``PROMCAND`` per-voxel candidate lists::

    magic 8s | version u16 | dtype u16 | Ny Nx M u32*3 | payload

    payload: float32 (velocity, cost) pairs, candidate slot fastest,
    then x, then y; unused slots are NaN.

Each file has a JSON sidecar at ``<path>.json``.  The complex sidecar
stores the acquisition description (first-moment products, venc vector,
window offset, units, seed, provenance) and must satisfy
venc_ab = pi / (gamma_m1_a - gamma_m1_b) on every canonical pair to
1e-6 relative.  Writes go through a temp file and rename, so readers
never observe a partial container.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import struct
import tempfile

import numpy as np

from .congruence import EncodingScheme, canonical_pairs
from .errors import ContainerFormatError, ValidationError

CIMG_MAGIC = b"PROMCIMG"
VMAP_MAGIC = b"PROMVMAP"
CAND_MAGIC = b"PROMCAND"
VERSION = 1
DTYPE_F32 = 1  # interleaved float32; the only defined payload encoding

VENC_REL_TOL = 1e-6

_HEAD = struct.Struct("<8sHH")


def sidecar_path(path) -> str:
    return str(path) + ".json"


def _atomic_write(path, data: bytes) -> None:
    path = str(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".",
                               prefix=os.path.basename(path), suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    """Atomic, key-sorted JSON write (sidecars, summaries, manifests)."""
    _atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n")
                  .encode("utf-8"))


def read_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _read_header(raw: bytes, magic: bytes, ndims: int, path) -> tuple:
    """Parse and check the fixed header; returns (dims, payload offset)."""
    need = _HEAD.size + 4 * ndims
    if len(raw) < need:
        raise ContainerFormatError(
            f"{path}: truncated header, {len(raw)} bytes < {need}",
            offset=len(raw))
    got_magic, version, dtype = _HEAD.unpack_from(raw, 0)
    if got_magic != magic:
        raise ContainerFormatError(
            f"{path}: bad magic {got_magic!r}, expected {magic!r}", offset=0)
    if version != VERSION:
        raise ContainerFormatError(
            f"{path}: unsupported version {version}", offset=8)
    if dtype != DTYPE_F32:
        raise ContainerFormatError(
            f"{path}: unknown dtype code {dtype}", offset=10)
    dims = struct.unpack_from(f"<{ndims}I", raw, _HEAD.size)
    for i, dim in enumerate(dims):
        if dim == 0:
            raise ContainerFormatError(
                f"{path}: dimension {i} is zero", offset=_HEAD.size + 4 * i)
    return dims, need


def _check_payload(raw: bytes, start: int, expected: int, path) -> None:
    actual = len(raw) - start
    if actual != expected:
        raise ContainerFormatError(
            f"{path}: payload is {actual} bytes, header implies {expected}",
            offset=start)


@dataclasses.dataclass(frozen=True)
class ComplexImage:
    """A measurement stack with the acquisition metadata of its sidecar.

    ``y`` has shape (encodings, coils, rows, cols); ``offset`` is the
    left edge of the velocity window the data was produced under (None
    when the producer made no choice).
    """

    y: np.ndarray
    gamma_m1: np.ndarray
    venc: np.ndarray
    offset: float | None = None
    seed: int | None = None
    provenance: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        y = np.asarray(self.y)
        if y.ndim != 4:
            raise ValidationError("image must be 4-D (Ne, Nc, Ny, Nx)")
        gm = np.asarray(self.gamma_m1, dtype=np.float64)
        venc = np.asarray(self.venc, dtype=np.float64)
        if gm.size != y.shape[0]:
            raise ValidationError("gamma_m1 length must match encodings")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "gamma_m1", gm)
        object.__setattr__(self, "venc", venc)
        _check_venc_consistency(gm, venc, "image")

    def scheme(self) -> EncodingScheme:
        return EncodingScheme(self.gamma_m1)


def _check_venc_consistency(gm: np.ndarray, venc: np.ndarray, where) -> None:
    pairs = canonical_pairs(gm.size)
    if venc.size != len(pairs):
        raise ContainerFormatError(
            f"{where}: venc has {venc.size} entries, {len(pairs)} pairs expected")
    for i, (a, b) in enumerate(pairs):
        expect = math.pi / (gm[a - 1] - gm[b - 1])
        if not math.isfinite(expect) or expect <= 0:
            raise ContainerFormatError(
                f"{where}: gamma_m1 pair ({a},{b}) gives no positive venc")
        if abs(venc[i] - expect) > VENC_REL_TOL * expect:
            raise ContainerFormatError(
                f"{where}: venc[{i}] = {venc[i]!r} inconsistent with gamma_m1 "
                f"(expected {expect!r})")


def write_complex_image(path, image: ComplexImage) -> None:
    ne, nc, ny, nx = image.y.shape
    header = _HEAD.pack(CIMG_MAGIC, VERSION, DTYPE_F32) + \
        struct.pack("<4I", ne, nc, ny, nx)
    flat = np.empty((ne, nc, ny, nx, 2), dtype="<f4")
    flat[..., 0] = image.y.real
    flat[..., 1] = image.y.imag
    _atomic_write(path, header + flat.tobytes())
    write_json(sidecar_path(path), {
        "gamma_m1": [float(g) for g in image.gamma_m1],
        "venc": [float(v) for v in image.venc],
        "offset": None if image.offset is None else float(image.offset),
        "units": {"gamma_m1": "s/cm", "venc": "cm/s", "velocity": "cm/s"},
        "seed": image.seed,
        "provenance": image.provenance,
    })


def read_complex_image(path) -> ComplexImage:
    with open(path, "rb") as fh:
        raw = fh.read()
    (ne, nc, ny, nx), start = _read_header(raw, CIMG_MAGIC, 4, path)
    _check_payload(raw, start, 2 * 4 * ne * nc * ny * nx, path)
    flat = np.frombuffer(raw, dtype="<f4", offset=start)
    flat = flat.reshape(ne, nc, ny, nx, 2)
    y = flat[..., 0].astype(np.complex128)
    y.imag = flat[..., 1]
    side = read_json(sidecar_path(path))
    for key in ("gamma_m1", "venc"):
        if key not in side:
            raise ContainerFormatError(f"{sidecar_path(path)}: missing {key!r}")
    gm = np.asarray(side["gamma_m1"], dtype=np.float64)
    venc = np.asarray(side["venc"], dtype=np.float64)
    if gm.size != ne:
        raise ContainerFormatError(
            f"{sidecar_path(path)}: gamma_m1 length {gm.size} != Ne {ne}")
    _check_venc_consistency(gm, venc, sidecar_path(path))
    offset = side.get("offset")
    return ComplexImage(y=y, gamma_m1=gm, venc=venc,
                        offset=None if offset is None else float(offset),
                        seed=side.get("seed"),
                        provenance=side.get("provenance", {}))


def write_velocity_map(path, vmap: np.ndarray, meta: dict | None = None) -> None:
    vmap = np.asarray(vmap, dtype=np.float64)
    if vmap.ndim != 2:
        raise ValidationError("velocity map must be 2-D")
    ny, nx = vmap.shape
    header = _HEAD.pack(VMAP_MAGIC, VERSION, DTYPE_F32) + \
        struct.pack("<2I", ny, nx)
    _atomic_write(path, header + vmap.astype("<f4").tobytes())
    write_json(sidecar_path(path), dict(meta or {}))


def read_velocity_map(path) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    (ny, nx), start = _read_header(raw, VMAP_MAGIC, 2, path)
    _check_payload(raw, start, 4 * ny * nx, path)
    vmap = np.frombuffer(raw, dtype="<f4", offset=start).reshape(ny, nx)
    return vmap.astype(np.float64), read_json(sidecar_path(path))


def write_candidates(path, cand_v: np.ndarray, cand_cost: np.ndarray,
                     meta: dict | None = None) -> None:
    cand_v = np.asarray(cand_v, dtype=np.float64)
    cand_cost = np.asarray(cand_cost, dtype=np.float64)
    if cand_v.ndim != 3 or cand_cost.shape != cand_v.shape:
        raise ValidationError("candidate arrays must share shape (Ny, Nx, M)")
    ny, nx, m = cand_v.shape
    header = _HEAD.pack(CAND_MAGIC, VERSION, DTYPE_F32) + \
        struct.pack("<3I", ny, nx, m)
    flat = np.empty((ny, nx, m, 2), dtype="<f4")
    flat[..., 0] = cand_v
    flat[..., 1] = cand_cost
    _atomic_write(path, header + flat.tobytes())
    write_json(sidecar_path(path), dict(meta or {}))


def read_candidates(path) -> tuple[np.ndarray, np.ndarray, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    (ny, nx, m), start = _read_header(raw, CAND_MAGIC, 3, path)
    _check_payload(raw, start, 2 * 4 * ny * nx * m, path)
    flat = np.frombuffer(raw, dtype="<f4", offset=start).reshape(ny, nx, m, 2)
    side = read_json(sidecar_path(path))
    return (flat[..., 0].astype(np.float64), flat[..., 1].astype(np.float64),
            side)
