"""Persistence and wire formats, image metrics, and storage accounting.

Formats (all little-endian, no padding):

  model file    magic "BDF1", version u16, levels u8, channels u8,
                mode u8, sigma_z f64, blur sigma f64, threshold f64,
                bits u8, norm u8, param count u32, then per parameter:
                name (u16 length + utf8), ndim u8, extents u32 each,
                float32 values.  Training runs in float64; storage
                narrows to float32.

  sidecar       one record per wavelet level, concatenated: magic
                "BAM1", width u32, height u32, bits u8, threshold f64,
                norm u8, encoding u8 (0 raw bitpack / 1 RLE), payload
                length u32, payload.  Raw packs b-bit levels MSB-first
                in row-major order; RLE stores (run u16, value u8)
                pairs over the same symbol stream and is chosen only
                when it is actually smaller.

  images        binary netpbm P6 (RGB) / P5 (gray), maxval 255 only.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .bam import NORM_ONE, NORM_TWO, BamConfig, BoundaryMap
from .coupling import FlowModel, MODE_ADDITIVE, MODE_GENERAL
from .errors import CodecError, ShapeError
from .resample import bicubic_down, bicubic_up

MODEL_MAGIC = b"BDF1"
MODEL_VERSION = 1
SIDECAR_MAGIC = b"BAM1"

ENC_RAW = 0
ENC_RLE = 1

_MODE_IDS = {MODE_GENERAL: 0, MODE_ADDITIVE: 1}
_NORM_IDS = {NORM_ONE: 1, NORM_TWO: 2}

PSNR_CAP_DB = 99.0


# -- model checkpoints ----------------------------------------------------------


def model_to_bytes(model: FlowModel) -> bytes:
    out = bytearray()
    out += MODEL_MAGIC
    out += struct.pack("<H", MODEL_VERSION)
    out += struct.pack("<BBB", model.levels, model.channels, _MODE_IDS[model.mode])
    out += struct.pack("<d", model.sigma_z)
    out += struct.pack("<dd", model.bam.sigma, model.bam.threshold)
    out += struct.pack("<BB", model.bam.bits, _NORM_IDS[model.bam.norm])
    named = model.named_params()
    out += struct.pack("<I", len(named))
    for name, p in named:
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw))
        out += raw
        out += struct.pack("<B", p.data.ndim)
        out += struct.pack(f"<{p.data.ndim}I", *p.data.shape)
        out += p.data.astype("<f4").tobytes()
    return bytes(out)


def model_from_bytes(buf: bytes) -> FlowModel:
    if buf[:4] != MODEL_MAGIC:
        raise CodecError(f"bad model magic {buf[:4]!r}", offset=0)
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != MODEL_VERSION:
        raise CodecError(f"unsupported model version {version}", offset=4)
    levels, channels, mode_id = struct.unpack_from("<BBB", buf, 6)
    (sigma_z,) = struct.unpack_from("<d", buf, 9)
    sigma, threshold = struct.unpack_from("<dd", buf, 17)
    bits, norm_id = struct.unpack_from("<BB", buf, 33)
    mode = {v: k for k, v in _MODE_IDS.items()}.get(mode_id)
    norm = {v: k for k, v in _NORM_IDS.items()}.get(norm_id)
    if mode is None:
        raise CodecError(f"unknown mode id {mode_id}", offset=8)
    if norm is None:
        raise CodecError(f"unknown norm id {norm_id}", offset=34)
    bam = BamConfig(sigma=sigma, threshold=threshold, bits=bits, norm=norm)
    model = FlowModel.create(levels, channels, mode=mode, bam=bam, sigma_z=sigma_z, zero=True)

    (count,) = struct.unpack_from("<I", buf, 35)
    at = 39
    table = dict(model.named_params())
    if count != len(table):
        raise CodecError(f"model has {len(table)} parameters, file lists {count}", offset=35)
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, at)
        at += 2
        name = buf[at : at + nlen].decode("utf-8")
        at += nlen
        if name not in table:
            raise CodecError(f"unknown parameter {name!r}", offset=at - nlen)
        (ndim,) = struct.unpack_from("<B", buf, at)
        at += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, at)
        at += 4 * ndim
        param = table[name]
        if shape != param.data.shape:
            raise CodecError(f"parameter {name!r} has shape {shape}, expected {param.data.shape}", offset=at)
        n = int(np.prod(shape)) if ndim else 1
        vals = np.frombuffer(buf, dtype="<f4", count=n, offset=at)
        at += 4 * n
        param.data = np.ascontiguousarray(vals.astype(np.float64).reshape(shape))
    if at != len(buf):
        raise CodecError(f"{len(buf) - at} trailing bytes after parameters", offset=at)
    return model


def save_model(model: FlowModel, path):
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path) -> FlowModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())


def model_hash(model_or_bytes) -> str:
    buf = model_or_bytes if isinstance(model_or_bytes, (bytes, bytearray)) else model_to_bytes(model_or_bytes)
    return hashlib.sha256(buf).hexdigest()[:16]


# -- boundary sidecars ----------------------------------------------------------


@dataclass
class SidecarRecord:
    """Decoded sidecar: integer levels plus the knobs that produced them."""

    levels: np.ndarray  # (1, H, W) int64
    bits: int
    threshold: float
    norm: str
    encoding: int


def _pack_symbols(levels: np.ndarray, bits: int) -> bytes:
    flat = levels.reshape(-1).astype(np.uint8)
    shifts = np.arange(bits - 1, -1, -1, dtype=np.uint8)
    bitarr = ((flat[:, None] >> shifts) & 1).astype(np.uint8)
    return np.packbits(bitarr.reshape(-1)).tobytes()


def _unpack_symbols(payload: bytes, bits: int, count: int) -> np.ndarray:
    bitarr = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=count * bits)
    vals = bitarr.reshape(count, bits)
    weights = 1 << np.arange(bits - 1, -1, -1)
    return (vals * weights).sum(axis=1).astype(np.int64)


def _rle_encode(levels: np.ndarray) -> bytes:
    flat = levels.reshape(-1).astype(np.int64)
    out = bytearray()
    edges = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate([[0], edges])
    ends = np.concatenate([edges, [flat.size]])
    for s, e in zip(starts, ends):
        run = int(e - s)
        val = int(flat[s])
        while run > 0:
            chunk = min(run, 0xFFFF)
            out += struct.pack("<HB", chunk, val)
            run -= chunk
    return bytes(out)


def _rle_decode(payload: bytes, count: int) -> np.ndarray:
    vals = np.empty(count, dtype=np.int64)
    at = 0
    pos = 0
    while pos < count:
        if at + 3 > len(payload):
            raise CodecError("RLE payload truncated", offset=at)
        run, val = struct.unpack_from("<HB", payload, at)
        at += 3
        if pos + run > count:
            raise CodecError(f"RLE run overflows {count} symbols", offset=at)
        vals[pos : pos + run] = val
        pos += run
    if at != len(payload):
        raise CodecError(f"{len(payload) - at} trailing RLE bytes", offset=at)
    return vals


def encode_sidecar(bmap: BoundaryMap, mode: str = "rle") -> bytes:
    """Serialize one boundary map; ``mode`` is "raw" or "rle".

    RLE falls back to raw packing whenever it would not be smaller, so
    the encoding flag in the header reflects what was actually stored.
    """
    levels = np.asarray(bmap.levels)
    if levels.ndim != 3 or levels.shape[0] != 1:
        raise ShapeError(f"sidecar levels must be 1xHxW, got {levels.shape}")
    cfg = bmap.config
    top = (1 << cfg.bits) - 1
    if levels.min() < 0 or levels.max() > top:
        raise ValueError(f"levels outside [0, {top}] for {cfg.bits}-bit encoding")
    h, w = levels.shape[1], levels.shape[2]

    raw = _pack_symbols(levels, cfg.bits)
    encoding = ENC_RAW
    payload = raw
    if mode == "rle":
        rle = _rle_encode(levels)
        if len(rle) < len(raw):
            encoding, payload = ENC_RLE, rle
    elif mode != "raw":
        raise ValueError(f"unknown sidecar mode {mode!r}")

    head = SIDECAR_MAGIC + struct.pack(
        "<IIBdBBI", w, h, cfg.bits, cfg.threshold, _NORM_IDS[cfg.norm], encoding, len(payload)
    )
    return head + payload


def decode_sidecar(buf: bytes, offset: int = 0) -> tuple[SidecarRecord, int]:
    if buf[offset : offset + 4] != SIDECAR_MAGIC:
        raise CodecError(f"bad sidecar magic {buf[offset:offset + 4]!r}", offset=offset)
    w, h, bits, threshold, norm_id, encoding, plen = struct.unpack_from("<IIBdBBI", buf, offset + 4)
    at = offset + 4 + struct.calcsize("<IIBdBBI")
    payload = buf[at : at + plen]
    if len(payload) != plen:
        raise CodecError(f"sidecar payload truncated ({len(payload)} of {plen} bytes)", offset=at)
    norm = {v: k for k, v in _NORM_IDS.items()}.get(norm_id)
    if norm is None:
        raise CodecError(f"unknown norm id {norm_id}", offset=offset + 13)
    count = h * w
    if encoding == ENC_RAW:
        if plen != (count * bits + 7) // 8:
            raise CodecError(f"raw payload is {plen} bytes, expected {(count * bits + 7) // 8}", offset=at)
        levels = _unpack_symbols(payload, bits, count)
    elif encoding == ENC_RLE:
        levels = _rle_decode(payload, count)
    else:
        raise CodecError(f"unknown encoding {encoding}", offset=offset + 22)
    record = SidecarRecord(
        levels=levels.reshape(1, h, w), bits=bits, threshold=threshold, norm=norm, encoding=encoding
    )
    return record, at + plen


def write_sidecars(encoded: list[bytes], path):
    with open(path, "wb") as fh:
        for rec in encoded:
            fh.write(rec)


def read_sidecars(path) -> list[SidecarRecord]:
    with open(path, "rb") as fh:
        buf = fh.read()
    records = []
    at = 0
    while at < len(buf):
        rec, at = decode_sidecar(buf, at)
        records.append(rec)
    return records


def quantize_unit(arr: np.ndarray, bits: int) -> np.ndarray:
    """Round a [0, 1] map onto integer levels {0, ..., 2**bits - 1}."""
    top = (1 << bits) - 1
    return np.clip(np.rint(np.asarray(arr) * top), 0, top).astype(np.int64)


# -- storage accounting ----------------------------------------------------------


@dataclass
class RescalePayload:
    """Everything the downscaler persists: LR image + per-level sidecars."""

    lr: np.ndarray  # (3, H, W) in [0, 1]
    sidecars: list = field(default_factory=list)  # encoded records (bytes)
    scale: int = 2
    model_hash: str = ""


@dataclass
class StorageReport:
    lr_bytes: int
    sidecar_payload_bytes: int
    sidecar_file_bytes: int
    ratio_payload: float
    ratio_file: float


_HEAD_LEN = 4 + struct.calcsize("<IIBdBBI")


def storage_report(payload: RescalePayload) -> StorageReport:
    """Byte accounting of the stored artifact.

    The LR baseline is raw 8-bit RGB (3 bytes per pixel).  Ratios are
    reported both for the sidecar payloads alone (headers excluded) and
    for the full sidecar files.
    """
    c, h, w = payload.lr.shape
    lr_bytes = c * h * w
    file_bytes = sum(len(rec) for rec in payload.sidecars)
    body_bytes = file_bytes - _HEAD_LEN * len(payload.sidecars)
    return StorageReport(
        lr_bytes=lr_bytes,
        sidecar_payload_bytes=body_bytes,
        sidecar_file_bytes=file_bytes,
        ratio_payload=body_bytes / lr_bytes,
        ratio_file=file_bytes / lr_bytes,
    )


# -- netpbm image I/O ----------------------------------------------------------


def _read_header_token(buf: bytes, at: int) -> tuple[bytes, int]:
    # Skips whitespace and '#' comments between header fields.
    n = len(buf)
    while at < n:
        ch = buf[at : at + 1]
        if ch.isspace():
            at += 1
        elif ch == b"#":
            while at < n and buf[at : at + 1] != b"\n":
                at += 1
        else:
            break
    start = at
    while at < n and not buf[at : at + 1].isspace():
        at += 1
    if start == at:
        raise CodecError("truncated netpbm header", offset=start)
    return buf[start:at], at


def read_image(path) -> np.ndarray:
    """Read a binary P6/P5 file into (C, H, W) float64 in [0, 1]."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, at = _read_header_token(buf, 0)
    if magic not in (b"P6", b"P5"):
        raise CodecError(f"unsupported netpbm magic {magic!r}", offset=0)
    fields = []
    for _ in range(3):
        tok, at = _read_header_token(buf, at)
        try:
            fields.append(int(tok))
        except ValueError:
            raise CodecError(f"non-numeric header field {tok!r}", offset=at) from None
    width, height, maxval = fields
    if maxval != 255:
        raise CodecError(f"only maxval 255 is supported, got {maxval}", offset=at)
    if width <= 0 or height <= 0:
        raise CodecError(f"bad image extents {width}x{height}", offset=at)
    at += 1  # single whitespace byte separates header from payload
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    data = buf[at : at + need]
    if len(data) != need:
        raise CodecError(f"payload truncated ({len(data)} of {need} bytes)", offset=at)
    arr = np.frombuffer(data, dtype=np.uint8).reshape(height, width, channels)
    return np.ascontiguousarray(arr.transpose(2, 0, 1)).astype(np.float64) / 255.0


def write_image(path, img: np.ndarray):
    """Write (3,H,W) as P6 or (1,H,W) as P5; values in [0, 1] are
    mapped by round(v*255) and clamped."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ShapeError(f"write_image expects 1xHxW or 3xHxW, got {img.shape}")
    c, h, w = img.shape
    quantized = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    magic = b"P6" if c == 3 else b"P5"
    with open(path, "wb") as fh:
        fh.write(magic + b"\n" + f"{w} {h}\n255\n".encode("ascii"))
        fh.write(quantized.transpose(1, 2, 0).tobytes())


# -- quality metrics ----------------------------------------------------------


def _luma255(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise ShapeError(f"expected CxHxW image, got {img.shape}")
    if img.shape[0] == 3:
        return (0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]) * 255.0
    if img.shape[0] == 1:
        return img[0] * 255.0
    raise ShapeError(f"expected 1 or 3 channels, got {img.shape[0]}")


def psnr_y(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB on the BT.601 luma channel, capped at 99 dB.

    Inputs are [0, 1] images; the metric is computed on the 8-bit scale
    (peak 255).
    """
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"psnr_y shape mismatch: {np.shape(a)} vs {np.shape(b)}")
    diff = _luma255(a) - _luma255(b)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(255.0 ** 2 / mse))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = size // 2
    xs = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    win = np.outer(k, k)
    return win / win.sum()


def ssim_y(a: np.ndarray, b: np.ndarray) -> float:
    """Single-scale SSIM on luma: 11x11 Gaussian window (sigma 1.5),
    K1=0.01, K2=0.03, L=255, averaged over valid windows only."""
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"ssim_y shape mismatch: {np.shape(a)} vs {np.shape(b)}")
    x = _luma255(a)
    y = _luma255(b)
    if x.shape[0] < 11 or x.shape[1] < 11:
        raise ShapeError(f"ssim_y needs at least 11x11 pixels, got {x.shape}")
    win = _gaussian_window()

    def filt(img):
        view = np.lib.stride_tricks.sliding_window_view(img, (11, 11))
        return np.einsum("hwij,ij->hw", view, win)

    mu_x = filt(x)
    mu_y = filt(y)
    xx = filt(x * x) - mu_x * mu_x
    yy = filt(y * y) - mu_y * mu_y
    xy = filt(x * y) - mu_x * mu_y
    c1 = (0.01 * 255.0) ** 2
    c2 = (0.03 * 255.0) ** 2
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * xy + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
    )
    return float(ssim_map.mean())


# -- residual statistics ----------------------------------------------------------


@dataclass
class ResidualStats:
    mean: float
    variance: float
    hist: np.ndarray  # (64,) counts
    bin_edges: np.ndarray  # (65,)


def residual_stats(x: np.ndarray, model: FlowModel) -> ResidualStats:
    """Statistics of the high-frequency residual x - up(down(x)).

    Down/up are bicubic at the model's scale factor; this isolates the
    content an LR image alone cannot carry.
    """
    x = np.asarray(x, dtype=np.float64)
    factor = model.scale
    residual = x - bicubic_up(bicubic_down(x, factor), factor)
    flat = residual.reshape(-1)
    hist, edges = np.histogram(flat, bins=64)
    return ResidualStats(
        mean=float(flat.mean()),
        variance=float(flat.var()),
        hist=hist,
        bin_edges=edges,
    )
