"""Single-file checkpoint container.

Layout: 8-byte magic, little-endian u64 header length, UTF-8 JSON header,
then every parameter as a raw little-endian float64 block in header order.
Writes go to a temporary file that is renamed into place, so a failed save
never leaves a partial checkpoint behind.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .encoders import EncoderSpec
from .model import GroundingModel, TrainConfig

MAGIC = b"OSAGDO\x00\x01"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: GroundingModel
    flip_pairs: list = field(default_factory=list)
    iteration: int = 0
    rng_state: dict | None = None

    @property
    def config(self) -> TrainConfig:
        return self.model.cfg

    @property
    def encoder(self) -> EncoderSpec:
        return self.model.enc

    def save(self, path) -> None:
        path = Path(path)
        state = self.model.state_dict()
        params, blocks, offset = [], [], 0
        for name, t in state.items():
            arr = t.detach().cpu().numpy().astype("<f8")
            params.append({"name": name, "shape": list(arr.shape), "offset": offset})
            blocks.append(arr.tobytes(order="C"))
            offset += arr.nbytes
        header = {
            "format_version": FORMAT_VERSION,
            "config": asdict(self.config),
            "encoder": asdict(self.encoder),
            "affordances": self.model.affordances,
            "flip_pairs": [list(p) for p in self.flip_pairs],
            "iteration": self.iteration,
            "rng_state": self.rng_state,
            "params": params,
        }
        hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(MAGIC)
                fh.write(struct.pack("<Q", len(hbytes)))
                fh.write(hbytes)
                for b in blocks:
                    fh.write(b)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        raw = path.read_bytes()
        if raw[:8] != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
        (hlen,) = struct.unpack("<Q", raw[8:16])
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')}")
        body = memoryview(raw)[16 + hlen:]
        cfg = TrainConfig(**header["config"])
        enc = EncoderSpec(**header["encoder"])
        model = GroundingModel(cfg, enc, header["affordances"])
        state = {}
        for p in header["params"]:
            n = int(np.prod(p["shape"])) if p["shape"] else 1
            arr = np.frombuffer(body, dtype="<f8", count=n, offset=p["offset"])
            state[p["name"]] = torch.from_numpy(arr.reshape(p["shape"]).astype(np.float64))
        model.load_state_dict(state, strict=True)
        return cls(model, [tuple(x) for x in header["flip_pairs"]], header["iteration"],
                   header["rng_state"])
