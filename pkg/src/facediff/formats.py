"""Bit-exact on-disk formats: dataset files, model checkpoints, PPM/PGM
rasters, and attribute text files.

All multi-byte fields are little-endian with fixed layouts, so every format
round-trips byte-identically (write -> read -> write) and is portable across
languages. JSON is used only for metadata blocks.
"""

from __future__ import annotations

import json
import struct
import zlib
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import diffusion as df
from . import toygen
from .autodiff.optim import AdamState, init_adam
from .conditioning import CondConfig
from .denoiser import UNetConfig
from .toygen import DatasetRecord, NormStats, ToyGenConfig, ViewParams

# --------------------------------------------------------------------------
# Dataset files
# --------------------------------------------------------------------------

DATASET_MAGIC = b"AMMC"
DATASET_VERSION = 1
# magic, version u16, count u64, k/d/image_size/n_attr u32, generator seed u64
_DS_HEADER = struct.Struct("<4sHQIIIIQ")

SEG_GRAY_SCALE = 40   # label -> gray value used in seg PGMs (6 classes -> 0..200)


def dataset_record_size(cfg: ToyGenConfig) -> int:
    """Fixed per-record byte count: latent f32 + image u8 + seg u8 + attrs f32
    + view f32[5]."""
    s = cfg.image_size
    return cfg.k * cfg.d * 4 + 3 * s * s + s * s + cfg.n_attr * 4 + 5 * 4


def dataset_file_size(cfg: ToyGenConfig, count: int) -> int:
    return _DS_HEADER.size + count * dataset_record_size(cfg)


def _image_to_u8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def write_dataset(path, records: Sequence[DatasetRecord],
                  cfg: ToyGenConfig) -> None:
    with open(path, "wb") as fh:
        fh.write(_DS_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, len(records),
                                 cfg.k, cfg.d, cfg.image_size, cfg.n_attr,
                                 cfg.seed))
        for rec in records:
            fh.write(np.ascontiguousarray(rec.latent, dtype="<f4").tobytes())
            fh.write(_image_to_u8(rec.image).tobytes())
            fh.write(np.ascontiguousarray(rec.seg, dtype=np.uint8).tobytes())
            fh.write(np.ascontiguousarray(rec.attrs, dtype="<f4").tobytes())
            fh.write(rec.view.to_vector().astype("<f4").tobytes())


def read_dataset(path) -> Tuple[List[DatasetRecord], ToyGenConfig]:
    """Returns (records, generator config); validates magic/version/layout."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _DS_HEADER.size:
        raise ValueError("dataset file truncated before header")
    magic, version, count, k, d, size, n_attr, seed = \
        _DS_HEADER.unpack_from(blob, 0)
    if magic != DATASET_MAGIC:
        raise ValueError(f"bad dataset magic {magic!r}")
    if version != DATASET_VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    cfg = ToyGenConfig(k=k, d=d, image_size=size, n_attr=n_attr, seed=seed)
    if len(blob) != dataset_file_size(cfg, count):
        raise ValueError(f"dataset file size {len(blob)} != expected "
                         f"{dataset_file_size(cfg, count)}")
    records = []
    off = _DS_HEADER.size
    for _ in range(count):
        latent = np.frombuffer(blob, "<f4", k * d, off) \
            .reshape(k, d).astype(np.float32)
        off += k * d * 4
        image = (np.frombuffer(blob, np.uint8, 3 * size * size, off)
                 .reshape(3, size, size).astype(np.float32) / 255.0)
        off += 3 * size * size
        seg = np.frombuffer(blob, np.uint8, size * size, off) \
            .reshape(size, size).copy()
        off += size * size
        attrs = np.frombuffer(blob, "<f4", n_attr, off).astype(np.float32)
        off += n_attr * 4
        v = np.frombuffer(blob, "<f4", 5, off)
        off += 5 * 4
        view = ViewParams.from_vector(v)
        records.append(DatasetRecord(latent=latent, image=image, seg=seg,
                                     attrs=attrs, view=view))
    return records, cfg


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"AMCK"
CHECKPOINT_VERSION = 1
_CK_HEADER = struct.Struct("<4sHI")   # magic, version u16, metadata length u32


def _model_meta(model: df.DiffusionModel) -> Dict:
    cfg = model.cfg
    return {
        "gen": {"k": cfg.gen.k, "d": cfg.gen.d, "image_size": cfg.gen.image_size,
                "n_attr": cfg.gen.n_attr, "seed": cfg.gen.seed,
                "frozen_zero_dims": cfg.gen.frozen_zero_dims},
        "cond": {"n_attr": cfg.cond.n_attr, "d_cond": cfg.cond.d_cond,
                 "image_size": cfg.cond.image_size,
                 "dropout_rate": cfg.cond.dropout_rate},
        "unet": {"k": cfg.unet.k, "d": cfg.unet.d,
                 "base_channels": cfg.unet.base_channels,
                 "channel_mults": list(cfg.unet.channel_mults),
                 "d_cond": cfg.unet.d_cond, "heads": cfg.unet.heads,
                 "gn_groups": cfg.unet.gn_groups,
                 "timesteps": cfg.unet.timesteps},
        "timesteps": cfg.timesteps,
        "prediction": cfg.prediction,
        "schedule": {"T": cfg.timesteps, "s": cfg.schedule_s,
                     "beta_clip": cfg.schedule_beta_clip},
        "train_steps_done": model.train_steps_done,
    }


def _config_from_meta(meta: Dict) -> df.ModelConfig:
    u = dict(meta["unet"])
    u["channel_mults"] = tuple(u["channel_mults"])
    return df.ModelConfig(
        gen=ToyGenConfig(**meta["gen"]), cond=CondConfig(**meta["cond"]),
        unet=UNetConfig(**u), timesteps=meta["timesteps"],
        prediction=meta["prediction"], schedule_s=meta["schedule"]["s"],
        schedule_beta_clip=meta["schedule"]["beta_clip"])


def _pack_tensors(tensors: Sequence[Tuple[str, np.ndarray]]) -> bytes:
    parts = [struct.pack("<I", len(tensors))]
    for name, arr in tensors:
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def _unpack_tensors(payload: bytes) -> List[Tuple[str, np.ndarray]]:
    (count,) = struct.unpack_from("<I", payload, 0)
    off = 4
    out = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", payload, off)
        off += 2
        name = payload[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", payload, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", payload, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(payload, "<f4", n, off).reshape(shape) \
            .astype(np.float32)
        off += n * 4
        out.append((name, arr))
    if off != len(payload):
        raise ValueError("checkpoint tensor payload has trailing bytes")
    return out


def save_checkpoint(path, model: df.DiffusionModel,
                    adam: Optional[AdamState] = None) -> None:
    """Named tensors + metadata with a CRC32 over the tensor payload.

    Optimizer moments are included when `adam` is given, which is what makes
    resumed training continue bit-identically.
    """
    meta = _model_meta(model)
    tensors: List[Tuple[str, np.ndarray]] = [(p.name, p.data)
                                             for p in model.store]
    if model.norm is not None:
        # JSON floats round-trip float64 exactly; the tensor blob is f32-only
        meta["norm"] = {"lo": np.asarray(model.norm.lo, np.float64).tolist(),
                        "hi": np.asarray(model.norm.hi, np.float64).tolist()}
    if adam is not None:
        meta["adam"] = {"beta1": adam.beta1, "beta2": adam.beta2,
                        "eps": adam.eps, "step": adam.step}
        for p in model.store:
            tensors.append((f"adam.m.{p.name}", adam.m[p.name]))
            tensors.append((f"adam.v.{p.name}", adam.v[p.name]))
    meta_raw = json.dumps(meta, sort_keys=True,
                          separators=(",", ":")).encode("utf-8")
    payload = _pack_tensors(tensors)
    with open(path, "wb") as fh:
        fh.write(_CK_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
                                 len(meta_raw)))
        fh.write(meta_raw)
        fh.write(struct.pack("<I", zlib.crc32(payload)))
        fh.write(payload)


def load_checkpoint(path) -> Tuple[df.DiffusionModel, Optional[AdamState]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _CK_HEADER.size:
        raise ValueError("checkpoint truncated before header")
    magic, version, meta_len = _CK_HEADER.unpack_from(blob, 0)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"bad checkpoint magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = _CK_HEADER.size
    meta = json.loads(blob[off:off + meta_len].decode("utf-8"))
    off += meta_len
    (crc,) = struct.unpack_from("<I", blob, off)
    payload = blob[off + 4:]
    if zlib.crc32(payload) != crc:
        raise ValueError("checkpoint tensor payload failed checksum")
    tensors = dict(_unpack_tensors(payload))

    model = df.DiffusionModel(_config_from_meta(meta))
    model.train_steps_done = int(meta["train_steps_done"])
    for p in model.store:
        if p.name not in tensors:
            raise ValueError(f"checkpoint missing tensor {p.name!r}")
        if tensors[p.name].shape != p.data.shape:
            raise ValueError(f"checkpoint tensor {p.name!r} shape mismatch")
        p.data = tensors[p.name]
    if "norm" in meta:
        model.norm = NormStats(lo=np.array(meta["norm"]["lo"], np.float64),
                               hi=np.array(meta["norm"]["hi"], np.float64))

    adam = None
    if "adam" in meta:
        a = meta["adam"]
        adam = init_adam(model.store.all(), beta1=a["beta1"], beta2=a["beta2"],
                         eps=a["eps"])
        adam.step = int(a["step"])
        for p in model.store:
            adam.m[p.name] = tensors[f"adam.m.{p.name}"].copy()
            adam.v[p.name] = tensors[f"adam.v.{p.name}"].copy()
    return model, adam


# --------------------------------------------------------------------------
# PPM / PGM rasters
# --------------------------------------------------------------------------

def write_ppm(path, image: np.ndarray) -> None:
    """Binary PPM (P6) from a (3, H, W) float image in [0, 1]."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError("write_ppm expects a (3, H, W) image")
    u8 = _image_to_u8(img).transpose(1, 2, 0)   # HWC for the file
    with open(path, "wb") as fh:
        fh.write(f"P6\n{u8.shape[1]} {u8.shape[0]}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(u8).tobytes())


def write_pgm(path, gray: np.ndarray) -> None:
    """Binary PGM (P5) from a (H, W) uint8 raster."""
    g = np.asarray(gray)
    if g.ndim != 2:
        raise ValueError("write_pgm expects a (H, W) raster")
    g = g.astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{g.shape[1]} {g.shape[0]}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(g).tobytes())


def _read_pnm(path, magic: bytes) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    fields: List[bytes] = []
    off = 0
    while len(fields) < 4:
        while off < len(blob) and blob[off:off + 1].isspace():
            off += 1
        if blob[off:off + 1] == b"#":   # comment line
            off = blob.index(b"\n", off) + 1
            continue
        end = off
        while end < len(blob) and not blob[end:end + 1].isspace():
            end += 1
        fields.append(blob[off:end])
        off = end
    off += 1   # single whitespace after maxval
    if fields[0] != magic:
        raise ValueError(f"expected {magic.decode()} file, got {fields[0]!r}")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError("only 8-bit PNM rasters are supported")
    ch = 3 if magic == b"P6" else 1
    data = np.frombuffer(blob, np.uint8, w * h * ch, off)
    return data.reshape(h, w, ch) if ch == 3 else data.reshape(h, w).copy()


def read_ppm(path) -> np.ndarray:
    """(3, H, W) float32 image in [0, 1]."""
    hwc = _read_pnm(path, b"P6")
    return (hwc.transpose(2, 0, 1).astype(np.float32) / 255.0)


def read_pgm(path) -> np.ndarray:
    """(H, W) uint8 raster."""
    return _read_pnm(path, b"P5")


def write_seg_pgm(path, seg: np.ndarray) -> None:
    """Segmentation labels as a PGM, scaled so classes are visually distinct."""
    if np.asarray(seg).max(initial=0) * SEG_GRAY_SCALE > 255:
        raise ValueError("segmentation labels out of PGM range")
    write_pgm(path, np.asarray(seg, dtype=np.uint8) * SEG_GRAY_SCALE)


def read_seg_pgm(path) -> np.ndarray:
    gray = read_pgm(path)
    if np.any(gray % SEG_GRAY_SCALE):
        raise ValueError(f"segmentation PGM values must be multiples of "
                         f"{SEG_GRAY_SCALE}")
    return (gray // SEG_GRAY_SCALE).astype(np.uint8)


# --------------------------------------------------------------------------
# Attribute text files
# --------------------------------------------------------------------------

def parse_attr_pairs(pairs: Sequence[str]) -> Dict[str, float]:
    """`name=value` strings -> {name: value}; names and ranges validated."""
    out: Dict[str, float] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"expected name=value, got {pair!r}")
        name, _, raw = pair.partition("=")
        name = name.strip()
        if name not in toygen.ATTRIBUTE_NAMES:
            raise ValueError(f"unknown attribute {name!r}; valid: "
                             f"{', '.join(toygen.ATTRIBUTE_NAMES)}")
        value = float(raw)
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"attribute {name!r} value {value} outside [0, 1]")
        out[name] = value
    return out


def read_attr_file(path) -> Dict[str, float]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [l.strip() for l in fh
                 if l.strip() and not l.strip().startswith("#")]
    return parse_attr_pairs(lines)


def write_attr_file(path, values: Dict[str, float]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name in toygen.ATTRIBUTE_NAMES:
            if name in values:
                fh.write(f"{name}={values[name]:.6f}\n")
