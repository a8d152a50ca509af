"""
``IBAC`` checkpoints for latent models (kinds ``vib``, ``idm``) and action
heads (``direct``, ``index``, ``scratch``, ``mean``).

Anything persisted implements ``to_state() -> (header dict, float vector)``
and ``from_state(header, vector)``. The vector is stored as little-endian
float64, so parameters reload bit for bit.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ibac.containers import read_container, write_container
from ibac.errors import FormatError, HeaderMismatchError
from ibac.heads.base import HEAD_REGISTRY
from ibac.models.base import MODEL_REGISTRY, LossBreakdown

CHECKPOINT_MAGIC = b"IBAC"
CHECKPOINT_VERSION = 1

STATUS_OK = "ok"
STATUS_DIVERGED = "diverged"


def _registry():
    return {**MODEL_REGISTRY, **HEAD_REGISTRY}


@dataclass
class Checkpoint:
    kind: str
    obj: object
    config: dict = field(default_factory=dict)
    final_losses: Optional[dict] = None
    seed: Optional[int] = None
    status: str = STATUS_OK
    extra: dict = field(default_factory=dict)


def save_checkpoint(obj, path, config: Optional[dict] = None, final_losses: Optional[LossBreakdown] = None,
                    seed: Optional[int] = None, status: str = STATUS_OK, extra: Optional[dict] = None) -> Path:
    state, vector = obj.to_state()
    vector = np.ascontiguousarray(vector, dtype="<f8")
    header = {
        "kind": obj.kind,
        "state": state,
        "n_params": int(vector.shape[0]),
        "config": config or {},
        "final_losses": None if final_losses is None else {
            "loss_total": final_losses.total, "loss_rec": final_losses.rec, "loss_kl": final_losses.kl},
        "seed": seed,
        "status": status,
        "extra": extra or {},
    }
    return write_container(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, header, vector.tobytes())


def load_checkpoint(path) -> Checkpoint:
    _, header, payload = read_container(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    try:
        kind = header["kind"]
        n_params = int(header["n_params"])
        state = header["state"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed checkpoint header ({exc})")
    registry = _registry()
    if kind not in registry:
        raise FormatError(f"{path}: unknown checkpoint kind {kind!r}")
    if len(payload) != 8 * n_params:
        raise HeaderMismatchError(f"{path}: payload has {len(payload)} bytes, header declares {n_params} parameters")
    vector = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    try:
        obj = registry[kind].from_state(state, vector)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: checkpoint state does not rebuild a {kind} ({exc})")
    return Checkpoint(kind=kind, obj=obj, config=header.get("config") or {},
                      final_losses=header.get("final_losses"), seed=header.get("seed"),
                      status=header.get("status", STATUS_OK), extra=header.get("extra") or {})
