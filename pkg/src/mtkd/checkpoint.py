"""Binary checkpoint container.

Layout (all integers little-endian)::

    8 bytes   magic  b"MTKDCKPT"
    u32       format version
    u64       header length
    header    UTF-8 JSON (sorted keys): model spec, config, iteration, RNG
              state, optimizer scalars, tensor table [name, dtype, shape, offset, nbytes]
    data      raw little-endian tensor bytes in table order
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .networks import ModelSpec, SrModel, build_model
from .optim import AdamState

MAGIC = b"MTKDCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    spec: ModelSpec
    params: dict[str, np.ndarray]
    config: dict = field(default_factory=dict)
    iteration: int = 0
    rng_state: dict | None = None
    optimizer: AdamState | None = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: SrModel, spec: ModelSpec, **kw) -> "Checkpoint":
        params = {n: p.data.copy() for n, p in model.named_parameters()}
        return cls(spec=spec, params=params, **kw)

    def to_bytes(self) -> bytes:
        tensors: list[tuple[str, np.ndarray]] = sorted(self.params.items())
        opt = None
        if self.optimizer is not None:
            st = self.optimizer
            opt = {"lr": st.lr, "beta1": st.beta1, "beta2": st.beta2, "eps": st.eps, "t": st.t}
            tensors += [(f"__adam_m__/{n}", st.m[n]) for n in sorted(st.m)]
            tensors += [(f"__adam_v__/{n}", st.v[n]) for n in sorted(st.v)]
        table, blobs, offset = [], [], 0
        for name, arr in tensors:
            a = np.ascontiguousarray(arr)
            a = a.astype(a.dtype.newbyteorder("<"), copy=False)
            raw = a.tobytes()
            table.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape),
                          "offset": offset, "nbytes": len(raw)})
            blobs.append(raw)
            offset += len(raw)
        header = {
            "model": asdict(self.spec),
            "config": self.config,
            "iteration": self.iteration,
            "rng_state": self.rng_state,
            "optimizer": opt,
            "extra": self.extra,
            "tensors": table,
        }
        hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return MAGIC + struct.pack("<IQ", VERSION, len(hbytes)) + hbytes + b"".join(blobs)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Checkpoint":
        if buf[:8] != MAGIC:
            raise CheckpointError("not a checkpoint: bad magic")
        version, hlen = struct.unpack_from("<IQ", buf, 8)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        start = 8 + 12
        header = json.loads(buf[start : start + hlen].decode("utf-8"))
        data = memoryview(buf)[start + hlen :]
        params, m, v = {}, {}, {}
        for ent in header["tensors"]:
            raw = data[ent["offset"] : ent["offset"] + ent["nbytes"]]
            arr = np.frombuffer(raw, dtype=np.dtype(ent["dtype"])).reshape(ent["shape"]).copy()
            name = ent["name"]
            if name.startswith("__adam_m__/"):
                m[name.split("/", 1)[1]] = arr
            elif name.startswith("__adam_v__/"):
                v[name.split("/", 1)[1]] = arr
            else:
                params[name] = arr
        opt = None
        if header["optimizer"] is not None:
            o = header["optimizer"]
            opt = AdamState(lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"], t=o["t"], m=m, v=v)
        return cls(spec=ModelSpec(**header["model"]), params=params, config=header["config"],
                   iteration=header["iteration"], rng_state=header["rng_state"], optimizer=opt,
                   extra=header["extra"])

    def save(self, path) -> Path:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(self.to_bytes())
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())

    def sha1(self) -> str:
        return hashlib.sha1(self.to_bytes()).hexdigest()

    def build(self, frozen: bool = False) -> SrModel:
        """Rebuild the network and load weights; shapes are validated against the architecture."""
        model = build_model(self.spec)
        try:
            model.load_state(self.params)
        except ValueError as exc:
            raise CheckpointError(str(exc)) from None
        return model.freeze() if frozen else model


def save_model(model: SrModel, spec: ModelSpec, path, **kw) -> Checkpoint:
    ck = Checkpoint.from_model(model, spec, **kw)
    ck.save(path)
    return ck


def load_model(path, frozen: bool = True) -> SrModel:
    return Checkpoint.load(path).build(frozen=frozen)
