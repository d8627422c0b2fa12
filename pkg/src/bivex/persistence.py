"""Single-file binary checkpoints: magic + version + JSON header + raw
64-bit little-endian tensor data + trailing 64-bit checksum. Writes are
atomic (temp file + rename); loads validate magic, version, checksum, and
the shape table, each failure with its own error kind."""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from bivex.model import ModelConfig, ModelParams, params_from_named
from bivex.optim import RmsPropState

MAGIC = b"BIVEXCKP"
VERSION = 1
_CHECKSUM_BYTES = 8


class CheckpointError(ValueError):
    """Base class for checkpoint load failures."""


class TruncatedError(CheckpointError):
    """File ends before the declared content."""


class VersionError(CheckpointError):
    """Magic or format version does not match this build."""


class ChecksumError(CheckpointError):
    """Trailing checksum does not cover the bytes read."""


class ShapeError(CheckpointError):
    """Tensor table is inconsistent with the stored data."""


class IncompatibleCheckpointError(CheckpointError):
    """Checkpoint flags/geometry conflict with what the caller requested."""


@dataclass
class Checkpoint:
    """Everything needed to reproduce a model (and optionally resume
    training): config flags and geometry, all parameter tensors, optimizer
    state, iteration, rng state, and the validation accuracy at save."""

    params: ModelParams
    rmsprop: RmsPropState | None = None
    iteration: int = 0
    rng_state: dict | None = None
    val_acc: float | None = None
    best_val_acc: float | None = None
    bad_checks: int = 0


def _checksum(blob: bytes) -> bytes:
    return hashlib.blake2b(blob, digest_size=_CHECKSUM_BYTES).digest()


def save(ckpt: Checkpoint, path: str) -> None:
    named = ckpt.params.named()
    for name, t in named.items():
        if not np.isfinite(t.data).all():
            raise ValueError(f"refusing to save non-finite tensor {name!r}")
    tensor_table = [{"name": n, "shape": list(t.shape)} for n, t in named.items()]
    rms = None
    if ckpt.rmsprop is not None:
        rms = {
            "decay": ckpt.rmsprop.decay,
            "epsilon": ckpt.rmsprop.epsilon,
            "learning_rate": ckpt.rmsprop.learning_rate,
            "tensors": [{"name": n, "shape": list(v.shape)} for n, v in sorted(ckpt.rmsprop.v.items())],
        }
    header = {
        "config": ckpt.params.config.to_dict(),
        "tensors": tensor_table,
        "rmsprop": rms,
        "iteration": ckpt.iteration,
        "rng_state": ckpt.rng_state,
        "val_acc": ckpt.val_acc,
        "best_val_acc": ckpt.best_val_acc,
        "bad_checks": ckpt.bad_checks,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    chunks = [MAGIC, struct.pack("<IQ", VERSION, len(header_bytes)), header_bytes]
    for _, t in named.items():
        chunks.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    if ckpt.rmsprop is not None:
        for n, v in sorted(ckpt.rmsprop.v.items()):
            chunks.append(np.ascontiguousarray(v, dtype="<f8").tobytes())
    blob = b"".join(chunks)
    blob += _checksum(blob)

    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(prefix=".ckpt.", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_header(path: str) -> dict:
    """Parse just the JSON header (used by the ``describe`` subcommand)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    return _parse(blob, path, header_only=True)[0]


def load(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    header, arrays, rms_arrays = _parse(blob, path, header_only=False)

    config = ModelConfig.from_dict(header["config"])
    params = params_from_named(config, arrays)
    rms = None
    if header["rmsprop"] is not None:
        meta = header["rmsprop"]
        rms = RmsPropState(
            decay=float(meta["decay"]),
            epsilon=float(meta["epsilon"]),
            learning_rate=float(meta["learning_rate"]),
            v={n: a.astype(config.np_dtype) for n, a in rms_arrays.items()},
        )
    return Checkpoint(
        params=params,
        rmsprop=rms,
        iteration=int(header["iteration"]),
        rng_state=header["rng_state"],
        val_acc=header["val_acc"],
        best_val_acc=header.get("best_val_acc"),
        bad_checks=int(header.get("bad_checks") or 0),
    )


def _parse(blob: bytes, path: str, header_only: bool):
    fixed = len(MAGIC) + struct.calcsize("<IQ")
    if len(blob) < fixed + _CHECKSUM_BYTES:
        raise TruncatedError(f"{path}: file shorter than the fixed header")
    if blob[: len(MAGIC)] != MAGIC:
        raise VersionError(f"{path}: bad magic {blob[:len(MAGIC)]!r}")
    version, hlen = struct.unpack_from("<IQ", blob, len(MAGIC))
    if version != VERSION:
        raise VersionError(f"{path}: format version {version}, this build reads {VERSION}")
    if len(blob) < fixed + hlen + _CHECKSUM_BYTES:
        raise TruncatedError(f"{path}: header declares {hlen} bytes but file is too short")
    try:
        header = json.loads(blob[fixed : fixed + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ChecksumError(f"{path}: unreadable header ({exc}); file likely corrupt") from None
    if header_only:
        return header, None, None

    sizes = [int(np.prod(t["shape"])) if t["shape"] else 1 for t in header["tensors"]]
    rms_meta = header["rmsprop"]["tensors"] if header["rmsprop"] else []
    rms_sizes = [int(np.prod(t["shape"])) if t["shape"] else 1 for t in rms_meta]
    data_bytes = 8 * (sum(sizes) + sum(rms_sizes))
    expected = fixed + hlen + data_bytes + _CHECKSUM_BYTES
    if len(blob) < expected:
        raise TruncatedError(f"{path}: expected {expected} bytes, file has {len(blob)}")
    if len(blob) > expected:
        raise ShapeError(f"{path}: {len(blob) - expected} trailing bytes beyond the shape table")
    if blob[-_CHECKSUM_BYTES:] != _checksum(blob[:-_CHECKSUM_BYTES]):
        raise ChecksumError(f"{path}: checksum mismatch")

    pos = fixed + hlen
    arrays: dict[str, np.ndarray] = {}
    for t, size in zip(header["tensors"], sizes):
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(t["shape"])
        arrays[t["name"]] = arr.copy()
        pos += 8 * size
    rms_arrays: dict[str, np.ndarray] = {}
    for t, size in zip(rms_meta, rms_sizes):
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(t["shape"])
        rms_arrays[t["name"]] = arr.copy()
        pos += 8 * size
    return header, arrays, rms_arrays


def check_compatible(ckpt: Checkpoint, use_dem: bool, use_san: bool, dem_kernel_swap: bool) -> None:
    """Explicit incompatibility error instead of silent reshaping."""
    cfg = ckpt.params.config
    got = (cfg.use_dem, cfg.use_san, cfg.dem_kernel_swap)
    want = (use_dem, use_san, dem_kernel_swap)
    if got != want:
        raise IncompatibleCheckpointError(
            f"checkpoint flags (use_dem={got[0]}, use_san={got[1]}, dem_kernel_swap={got[2]}) "
            f"!= requested (use_dem={want[0]}, use_san={want[1]}, dem_kernel_swap={want[2]})"
        )
