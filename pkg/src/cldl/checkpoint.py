"""Binary checkpoint for an ensemble and (optionally) its label confusion model.

Layout, integers little-endian u32::

    b"CLDL" | version | len, arch tag (utf-8) | C | d | N
    | rank, input extents...
    | N member blobs | LCM blob
    blob  = count, then per tensor: name length, name, rank, extents..., f64 LE data

An LCM blob with count 0 means "no LCM" (cross-entropy trained ensembles).
The LCM blob carries ``gamma`` as a one-element tensor.
"""

import io
import struct

import numpy as np

from .lcm import LabelConfusionModel
from .models import ARCHITECTURES, Ensemble, SubModel
from .tensor import Tensor

MAGIC = b"CLDL"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _u32(buf, n):
    buf.write(struct.pack("<I", int(n)))


def _write_blob(buf, named):
    _u32(buf, len(named))
    for name, arr in named:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode()
        _u32(buf, len(raw))
        buf.write(raw)
        _u32(buf, arr.ndim)
        for n in arr.shape:
            _u32(buf, n)
        buf.write(arr.tobytes())


def dumps(ensemble, lcm=None):
    buf = io.BytesIO()
    buf.write(MAGIC)
    _u32(buf, VERSION)
    tag = ensemble.arch.encode()
    _u32(buf, len(tag))
    buf.write(tag)
    first = ensemble.members[0]
    for n in (first.n_classes, first.rep_dim, len(ensemble)):
        _u32(buf, n)
    _u32(buf, len(first.input_shape))
    for n in first.input_shape:
        _u32(buf, n)
    for m in ensemble.members:
        _write_blob(buf, [(k, p.data) for k, p in m.params.items()])
    if lcm is None:
        _write_blob(buf, [])
    else:
        named = [(k, p.data) for k, p in lcm.params.items()]
        _write_blob(buf, named + [("gamma", np.array([lcm.gamma]))])
    return buf.getvalue()


def save(path, ensemble, lcm=None):
    with open(path, "wb") as fh:
        fh.write(dumps(ensemble, lcm))


class _Reader:
    def __init__(self, raw):
        self.raw = raw
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise CheckpointError("checkpoint truncated")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def blob(self):
        out = {}
        for _ in range(self.u32()):
            name = self.take(self.u32()).decode()
            shape = tuple(self.u32() for _ in range(self.u32()))
            n = int(np.prod(shape)) if shape else 1
            out[name] = np.frombuffer(self.take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
        return out


def loads(raw):
    r = _Reader(raw)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a CLDL checkpoint (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} not supported (expected {VERSION})")
    arch = r.take(r.u32()).decode()
    if arch not in ARCHITECTURES:
        raise CheckpointError(f"unknown architecture tag {arch!r}")
    n_classes, rep_dim, n_members = r.u32(), r.u32(), r.u32()
    input_shape = tuple(r.u32() for _ in range(r.u32()))
    members = []
    for _ in range(n_members):
        params = {k: Tensor(v, requires_grad=True, name=k) for k, v in r.blob().items()}
        members.append(SubModel(arch, params, input_shape, n_classes, rep_dim))
    lcm_params = r.blob()
    lcm = None
    if lcm_params:
        gamma = float(lcm_params.pop("gamma")[0])
        lcm = LabelConfusionModel(
            {k: Tensor(v, requires_grad=True, name=k) for k, v in lcm_params.items()}, gamma)
    if r.pos != len(raw):
        raise CheckpointError(f"{len(raw) - r.pos} trailing bytes after checkpoint payload")
    return Ensemble(members), lcm


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
