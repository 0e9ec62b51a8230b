"""PEAR v1 containers for fitted transformers and model checkpoints.

Shared layout: magic ``PEAR``, version byte 1, a kind byte, two zero bytes,
then a kind-specific payload. Kind 1 is the embedding dataset (see
``pearl.data``); kinds 2-5 are standardizer, whitener, LDA projector, and
model checkpoint. Arrays are stored as u8 ndim, u32 dims, float64
little-endian data.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import MAGIC, VERSION, DataFormatError
from .model import PearlConfig, PearlParams
from .preprocessing import LdaProjector, PcaWhitener, Standardizer

KIND_STANDARDIZER = 2
KIND_WHITENER = 3
KIND_LDA = 4
KIND_CHECKPOINT = 5


def _write_array(buf: io.BytesIO, a: np.ndarray) -> None:
    a = np.ascontiguousarray(a, dtype="<f8")
    buf.write(struct.pack("<B", a.ndim))
    for dim in a.shape:
        buf.write(struct.pack("<I", dim))
    buf.write(a.tobytes())


def _read_array(buf: io.BytesIO) -> np.ndarray:
    (ndim,) = struct.unpack("<B", buf.read(1))
    shape = struct.unpack(f"<{ndim}I", buf.read(4 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    data = buf.read(8 * count)
    if len(data) != 8 * count:
        raise DataFormatError("truncated array payload")
    return np.frombuffer(data, dtype="<f8").reshape(shape).copy()


def _header(kind: int) -> bytes:
    return MAGIC + bytes([VERSION, kind, 0, 0])


def _check_header(buf: io.BytesIO, kind: int) -> None:
    head = buf.read(8)
    if len(head) < 8 or head[0:4] != MAGIC:
        raise DataFormatError("unknown magic bytes at byte offset 0")
    if head[4] != VERSION:
        raise DataFormatError(f"unsupported version {head[4]} at byte offset 4")
    if head[5] != kind:
        raise DataFormatError(f"expected kind {kind}, found {head[5]} at byte offset 5")


def dump_standardizer(s: Standardizer) -> bytes:
    buf = io.BytesIO()
    buf.write(_header(KIND_STANDARDIZER))
    _write_standardizer_body(buf, s)
    return buf.getvalue()


def load_standardizer_blob(raw: bytes) -> Standardizer:
    buf = io.BytesIO(raw)
    _check_header(buf, KIND_STANDARDIZER)
    return _read_standardizer_body(buf)


def _write_standardizer_body(buf: io.BytesIO, s: Standardizer) -> None:
    _write_array(buf, s.mean)
    _write_array(buf, s.std)
    buf.write(struct.pack("<d", s.epsilon))


def _read_standardizer_body(buf: io.BytesIO) -> Standardizer:
    mean = _read_array(buf)
    std = _read_array(buf)
    (eps,) = struct.unpack("<d", buf.read(8))
    return Standardizer(mean=mean, std=std, epsilon=eps)


def dump_whitener(w: PcaWhitener) -> bytes:
    buf = io.BytesIO()
    buf.write(_header(KIND_WHITENER))
    _write_array(buf, w.mean)
    _write_array(buf, w.components)
    _write_array(buf, w.eigenvalues)
    buf.write(struct.pack("<d", w.eigen_floor))
    return buf.getvalue()


def load_whitener_blob(raw: bytes) -> PcaWhitener:
    buf = io.BytesIO(raw)
    _check_header(buf, KIND_WHITENER)
    mean = _read_array(buf)
    components = _read_array(buf)
    eigenvalues = _read_array(buf)
    (floor,) = struct.unpack("<d", buf.read(8))
    return PcaWhitener(mean=mean, components=components,
                       eigenvalues=eigenvalues, eigen_floor=floor)


def dump_lda(p: LdaProjector) -> bytes:
    buf = io.BytesIO()
    buf.write(_header(KIND_LDA))
    _write_array(buf, p.projection)
    buf.write(struct.pack("<d", p.shrinkage_lambda))
    return buf.getvalue()


def load_lda_blob(raw: bytes) -> LdaProjector:
    buf = io.BytesIO(raw)
    _check_header(buf, KIND_LDA)
    projection = _read_array(buf)
    (lam,) = struct.unpack("<d", buf.read(8))
    return LdaProjector(projection=projection, shrinkage_lambda=lam)


@dataclass(frozen=True)
class ModelCheckpoint:
    """A trained model plus the standardizer it expects its inputs to pass
    through, so a checkpoint file is self-contained for transforming raw
    embeddings."""

    cfg: PearlConfig
    params: PearlParams
    scaler: Standardizer


def dump_checkpoint(ck: ModelCheckpoint) -> bytes:
    cfg, params = ck.cfg, ck.params
    buf = io.BytesIO()
    buf.write(_header(KIND_CHECKPOINT))
    buf.write(struct.pack("<IIIII", params.d, params.C, params.d_s,
                          params.d_r, params.hidden))
    buf.write(struct.pack(
        "<8d", cfg.w_recon, cfg.w_full, cfg.w_align, cfg.w_contrast,
        cfg.w_cls, cfg.w_ortho, cfg.tau, cfg.lr,
    ))
    buf.write(struct.pack("<IIIq", cfg.batch_size, cfg.max_epochs,
                          cfg.patience, cfg.seed))
    _write_standardizer_body(buf, ck.scaler)
    buf.write(struct.pack("<I", len(params.layers)))
    for name, arr in params.layers.items():
        raw = name.encode("ascii")
        buf.write(struct.pack("<B", len(raw)))
        buf.write(raw)
        _write_array(buf, arr)
    return buf.getvalue()


def load_checkpoint_blob(raw: bytes) -> ModelCheckpoint:
    buf = io.BytesIO(raw)
    _check_header(buf, KIND_CHECKPOINT)
    d, C, d_s, d_r, hidden = struct.unpack("<IIIII", buf.read(20))
    (w_recon, w_full, w_align, w_contrast, w_cls, w_ortho, tau, lr) = struct.unpack(
        "<8d", buf.read(64)
    )
    batch_size, max_epochs, patience, seed = struct.unpack("<IIIq", buf.read(20))
    scaler = _read_standardizer_body(buf)
    (n_layers,) = struct.unpack("<I", buf.read(4))
    layers: dict[str, np.ndarray] = {}
    for _ in range(n_layers):
        (ln,) = struct.unpack("<B", buf.read(1))
        name = buf.read(ln).decode("ascii")
        layers[name] = _read_array(buf)
    cfg = PearlConfig(
        d_s=d_s, d_r=d_r, hidden=hidden, w_recon=w_recon, w_full=w_full,
        w_align=w_align, w_contrast=w_contrast, w_cls=w_cls, w_ortho=w_ortho,
        tau=tau, lr=lr, batch_size=batch_size, max_epochs=max_epochs,
        patience=patience, seed=seed,
    )
    params = PearlParams(layers=layers, d=d, C=C, d_s=d_s, d_r=d_r, hidden=hidden)
    return ModelCheckpoint(cfg=cfg, params=params, scaler=scaler)


def save_checkpoint(ck: ModelCheckpoint, path) -> None:
    Path(path).write_bytes(dump_checkpoint(ck))


def load_checkpoint(path) -> ModelCheckpoint:
    return load_checkpoint_blob(Path(path).read_bytes())
