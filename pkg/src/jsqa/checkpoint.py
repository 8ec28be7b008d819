"""Single-file checkpoint container.

Layout::

    b"JSQACKPT" | u32 version | u32 header length | header JSON | tensor blob | sha256 digest

The header lists every tensor (name, dtype, shape, offset, size) and carries
the configs, counters and optimiser hyper-parameters. The digest covers all
preceding bytes and is checked before anything is parsed, so a damaged file is
rejected without a partial load. Serialisation is canonical: saving a loaded
checkpoint reproduces the original bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError, ChecksumError, VersionMismatchError
from .model import JsqaModel, ModelConfig

MAGIC = b"JSQACKPT"
FORMAT_VERSION = 1
_DIGEST = 32


@dataclass
class Checkpoint:
    stage: str
    model_config: dict
    params: dict[str, np.ndarray]
    train_config: dict = field(default_factory=dict)
    optimizer_state: dict[str, np.ndarray] = field(default_factory=dict)
    optimizer_groups: list = field(default_factory=list)
    epoch: int = 0
    step: int = 0
    seed_lineage: list[int] = field(default_factory=list)

    # -- model / optimiser conversion -------------------------------------

    @classmethod
    def from_model(cls, model: JsqaModel, stage: str, train_config: dict | None = None,
                   optimizer: torch.optim.Optimizer | None = None, epoch: int = 0, step: int = 0,
                   seed_lineage: list[int] | None = None) -> "Checkpoint":
        params = {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}
        opt_state, groups = {}, []
        if optimizer is not None:
            sd = optimizer.state_dict()
            for idx, st in sd["state"].items():
                for key, val in st.items():
                    opt_state[f"{idx}.{key}"] = torch.as_tensor(val).detach().cpu().numpy().copy()
            groups = json.loads(json.dumps(sd["param_groups"]))
        return cls(stage, model.cfg.to_dict(), params, dict(train_config or {}), opt_state, groups,
                   int(epoch), int(step), list(seed_lineage or []))

    def build_model(self) -> JsqaModel:
        model = JsqaModel(ModelConfig.from_dict(self.model_config))
        state = {k: torch.from_numpy(v.copy()) for k, v in self.params.items()}
        sample = next(iter(state.values()), None)
        if sample is not None and sample.dtype.is_floating_point:
            model = model.to(sample.dtype)
        model.load_state_dict(state, strict=True)
        return model

    def restore_optimizer(self, optimizer: torch.optim.Optimizer) -> None:
        if not self.optimizer_groups:
            return
        state: dict[int, dict] = {}
        for name, arr in self.optimizer_state.items():
            idx, key = name.split(".", 1)
            state.setdefault(int(idx), {})[key] = torch.from_numpy(arr.copy())
        optimizer.load_state_dict({"state": state, "param_groups": json.loads(json.dumps(self.optimizer_groups))})

    # -- serialisation -----------------------------------------------------

    def to_bytes(self) -> bytes:
        entries, blobs, offset = [], [], 0
        for group, tensors in (("param", self.params), ("optim", self.optimizer_state)):
            for name, arr in tensors.items():
                arr = np.ascontiguousarray(arr)
                data = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
                entries.append({"group": group, "name": name, "dtype": arr.dtype.newbyteorder("<").str,
                                "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
                blobs.append(data)
                offset += len(data)
        header = {
            "stage": self.stage,
            "model_config": self.model_config,
            "train_config": self.train_config,
            "optimizer_groups": self.optimizer_groups,
            "epoch": self.epoch,
            "step": self.step,
            "seed_lineage": self.seed_lineage,
            "tensors": entries,
        }
        head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        body = MAGIC + struct.pack("<II", FORMAT_VERSION, len(head)) + head + b"".join(blobs)
        return body + hashlib.sha256(body).digest()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        if len(raw) < len(MAGIC) + 8 + _DIGEST or raw[: len(MAGIC)] != MAGIC:
            if raw[: len(MAGIC)] == MAGIC:
                raise ChecksumError("checkpoint is truncated")
            raise CheckpointError("not a JSQA checkpoint (bad magic bytes)")
        version, head_len = struct.unpack_from("<II", raw, len(MAGIC))
        if version != FORMAT_VERSION:
            raise VersionMismatchError(f"checkpoint format {version}, this build reads {FORMAT_VERSION}")
        body, digest = raw[:-_DIGEST], raw[-_DIGEST:]
        if hashlib.sha256(body).digest() != digest:
            raise ChecksumError("checkpoint checksum mismatch (truncated or corrupted)")
        start = len(MAGIC) + 8
        header = json.loads(body[start:start + head_len])
        blob = memoryview(body)[start + head_len:]
        params, opt = {}, {}
        for e in header["tensors"]:
            arr = np.frombuffer(blob[e["offset"]:e["offset"] + e["nbytes"]], dtype=np.dtype(e["dtype"]))
            arr = arr.reshape(e["shape"]).copy()
            (params if e["group"] == "param" else opt)[e["name"]] = arr
        return cls(header["stage"], header["model_config"], params, header["train_config"], opt,
                   header["optimizer_groups"], header["epoch"], header["step"], header["seed_lineage"])


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(ckpt.to_bytes())
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return Checkpoint.from_bytes(raw)
