"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    b"VSLM"  u32 version
    u32 n    n bytes UTF-8 JSON model config
    u32 count of tensor records, then per record:
        u32 len, path (UTF-8), u8 dtype tag, u32 ndim, u32 * ndim shape, payload
    u32 depth, then depth * (u32 block, u32 storage)

Each storage is written once, however many blocks read it.
"""

import json
import struct

import numpy as np

from .autograd import Tensor
from .config import ModelConfig
from .errors import FormatError
from .params import ParamSet

MAGIC = b"VSLM"
VERSION = 1
DTYPE_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
TAG_DTYPES = {v: k for k, v in DTYPE_TAGS.items()}


def save_checkpoint(path, params, config, extra=None):
    cfg = config.to_dict()
    if params.transform is not None:
        cfg["_transform"] = params.transform
    if extra:
        cfg["_extra"] = extra
    cfg_bytes = json.dumps(cfg, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(cfg_bytes)))
        f.write(cfg_bytes)
        f.write(struct.pack("<I", len(params.tensors)))
        for name, t in params.items():
            arr = np.ascontiguousarray(t.data, dtype=t.dtype.newbyteorder("<"))
            key = name.encode("utf-8")
            f.write(struct.pack("<I", len(key)))
            f.write(key)
            f.write(struct.pack("<BI", DTYPE_TAGS[arr.dtype], arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())
        f.write(struct.pack("<I", len(params.sharing_map)))
        for block, storage in sorted(params.sharing_map.items()):
            f.write(struct.pack("<II", block, storage))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise FormatError("checkpoint truncated", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path):
    """Return ``(params, config, extra)`` from a file written by :func:`save_checkpoint`."""
    with open(path, "rb") as f:
        r = _Reader(f.read())
    if r.take(4) != MAGIC:
        raise FormatError(f"{path}: bad magic", 0)
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}", 4)
    (n,) = r.unpack("<I")
    cfg = json.loads(r.take(n).decode("utf-8"))
    transform = cfg.pop("_transform", None)
    extra = cfg.pop("_extra", None)
    config = ModelConfig.from_dict(cfg)
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (klen,) = r.unpack("<I")
        name = r.take(klen).decode("utf-8")
        tag, ndim = r.unpack("<BI")
        if tag not in TAG_DTYPES:
            raise FormatError(f"{path}: unknown dtype tag {tag}", r.pos - 5)
        shape = r.unpack(f"<{ndim}I")
        dtype = TAG_DTYPES[tag]
        nbytes = int(np.prod(shape)) * dtype.itemsize
        arr = np.frombuffer(r.take(nbytes), dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
        tensors[name] = Tensor(arr, requires_grad=True)
    (depth,) = r.unpack("<I")
    sharing = dict(r.unpack("<II") for _ in range(depth))
    if r.pos != len(r.buf):
        raise FormatError(f"{path}: trailing bytes", r.pos)
    return ParamSet(tensors, sharing, transform), config, extra


def count_mlp_storages(path):
    params, _, _ = load_checkpoint(path)
    return len({k.split(".")[1] for k in params if k.startswith("mlps.")})
