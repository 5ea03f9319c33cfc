"""Versioned, digest-protected checkpoints for resumable replays.

File layout: a magic+version header line, a sha256 line covering the payload,
then an npz archive holding the model config (as JSON), every posterior
array, engine counters, the base seed, and any pipeline extras (metric rows,
running alarm pool, periodicity table).  Randomness in the pipeline is
derived statelessly from (base_seed, period, stream), so "RNG state" reduces
to the base seed plus the next period index and resuming is bit-exact.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .model import ModelConfig, ParamState

__all__ = [
    "CheckpointError",
    "CheckpointVersionError",
    "CheckpointCorruptError",
    "Checkpoint",
    "checkpoint_save",
    "checkpoint_load",
]

MAGIC = b"dyadscope-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Base class for checkpoint read/write failures."""


class CheckpointVersionError(CheckpointError):
    """The file was written by an incompatible format version."""


class CheckpointCorruptError(CheckpointError):
    """The payload does not match its embedded digest (or is truncated)."""


@dataclass
class Checkpoint:
    """Everything needed to resume a replay after ``period_index`` periods.

    ``counters`` carries the engine's cumulative sweep counters (skips,
    clamps, factor count); ``extras`` is an open dict of numpy arrays the
    pipeline uses for its own running outputs.
    """

    config: ModelConfig
    state: ParamState
    period_index: int
    base_seed: int
    counters: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)


_STATE_KEYS = (
    "alpha_precision", "alpha_precision_mean",
    "beta_precision", "beta_precision_mean",
    "u_precision", "u_precision_mean",
    "v_precision", "v_precision_mean",
)


def _payload_bytes(cp: Checkpoint) -> bytes:
    meta = {
        "config": cp.config.to_dict(),
        "period_index": int(cp.period_index),
        "base_seed": int(cp.base_seed),
        "counters": {k: int(v) for k, v in cp.counters.items()},
        "extras_keys": sorted(cp.extras),
        "state_scalars": {
            "mu_precision": cp.state.mu_precision,
            "mu_precision_mean": cp.state.mu_precision_mean,
            "cc_log_q": cp.state.cc_log_q,
            "period_index": cp.state.period_index,
        },
    }
    arrays = {"meta_json": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for key in _STATE_KEYS:
        arrays[f"state_{key}"] = getattr(cp.state, key)
    for key, value in cp.extras.items():
        arrays[f"extra_{key}"] = np.asarray(value)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    return buf.getvalue()


def checkpoint_save(path, cp: Checkpoint) -> None:
    payload = _payload_bytes(cp)
    digest = hashlib.sha256(payload).hexdigest()
    with open(path, "wb") as fh:
        fh.write(MAGIC + b" %d\n" % FORMAT_VERSION)
        fh.write(b"sha256 " + digest.encode() + b"\n")
        fh.write(payload)


def checkpoint_load(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            header = fh.readline()
            digest_line = fh.readline()
            payload = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path!r}: {exc}") from exc

    parts = header.split()
    if len(parts) != 2 or parts[0] != MAGIC:
        raise CheckpointError(f"{path!r} is not a checkpoint file")
    try:
        version = int(parts[1])
    except ValueError:
        raise CheckpointError(f"unparseable version in {path!r}") from None
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {version} != supported {FORMAT_VERSION}")

    dparts = digest_line.split()
    if len(dparts) != 2 or dparts[0] != b"sha256":
        raise CheckpointCorruptError(f"missing digest line in {path!r}")
    if hashlib.sha256(payload).hexdigest().encode() != dparts[1]:
        raise CheckpointCorruptError(f"digest mismatch in {path!r}")

    with np.load(io.BytesIO(payload)) as npz:
        meta = json.loads(bytes(npz["meta_json"]).decode())
        config = ModelConfig.from_dict(meta["config"])
        scalars = meta["state_scalars"]
        state = ParamState(
            mu_precision=float(scalars["mu_precision"]),
            mu_precision_mean=float(scalars["mu_precision_mean"]),
            **{k: npz[f"state_{k}"].copy() for k in _STATE_KEYS},
        )
        state.cc_log_q = float(scalars["cc_log_q"])
        state.period_index = int(scalars["period_index"])
        extras = {k: npz[f"extra_{k}"].copy() for k in meta["extras_keys"]}

    return Checkpoint(config=config, state=state,
                      period_index=int(meta["period_index"]),
                      base_seed=int(meta["base_seed"]),
                      counters={k: int(v) for k, v in meta["counters"].items()},
                      extras=extras)
