"""On-disk formats: P5 graymaps, binary checkpoints, key = value configs, metrics CSV."""

from __future__ import annotations

import csv
import json
import re
import struct
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

CKPT_MAGIC = b"MERITCKP"
CKPT_VERSION = 1
METRICS_HEADER = ("step", "class", "dsc", "hd95", "loss", "seed", "config_hash")


# -- P5 graymaps ----------------------------------------------------------

def write_pgm(path, array: np.ndarray) -> None:
    a = np.asarray(array)
    if a.ndim != 2:
        raise ValueError("graymap must be 2-D")
    if a.min(initial=0) < 0 or a.max(initial=0) > 255:
        raise ValueError("graymap values must be within 0..255")
    h, w = a.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(a.astype(np.uint8).tobytes())


_PGM_TOKEN = re.compile(rb"(?:\s*(?:#[^\n]*\n)?)*\s*(\S+)")


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    pos = 0
    fields = []
    for _ in range(4):
        m = _PGM_TOKEN.match(raw, pos)
        if m is None:
            raise ValueError(f"{path}: truncated graymap header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary graymap")
    w, h, maxval = (int(v) for v in fields[1:])
    if maxval > 255:
        raise ValueError(f"{path}: only 8-bit graymaps are supported")
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos + 1)
    return data.reshape(h, w).copy()


def image_to_u8(image: np.ndarray) -> np.ndarray:
    """(C, H, W) image in [0, 1] -> (C*H, W) uint8 with channels stacked vertically."""
    c, h, w = image.shape
    return np.round(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8).reshape(c * h, w)


def u8_to_image(stack: np.ndarray, channels: int = 3) -> np.ndarray:
    ch, w = stack.shape
    return (stack.reshape(channels, ch // channels, w).astype(np.float32) / 255.0)


def save_dataset(out_dir, images: np.ndarray, masks: np.ndarray) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, (img, msk) in enumerate(zip(images, masks)):
        write_pgm(out / f"img_{i:06d}.pgm", image_to_u8(img))
        write_pgm(out / f"msk_{i:06d}.pgm", msk)


def load_dataset(in_dir) -> tuple[np.ndarray, np.ndarray]:
    src = Path(in_dir)
    img_paths = sorted(src.glob("img_*.pgm"))
    if not img_paths:
        raise FileNotFoundError(f"no img_*.pgm files in {src}")
    images, masks = [], []
    for p in img_paths:
        images.append(u8_to_image(read_pgm(p)))
        masks.append(read_pgm(src / p.name.replace("img_", "msk_")))
    return np.stack(images), np.stack(masks)


def save_prediction(out_dir, index: int, probs: np.ndarray, pred_mask: np.ndarray) -> None:
    """Per-class probability maps scaled to 0..255 and the predicted label mask."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for c, p in enumerate(probs):
        write_pgm(out / f"prob_{index:06d}_c{c}.pgm", np.round(np.clip(p, 0, 1) * 255).astype(np.uint8))
    write_pgm(out / f"pred_{index:06d}.pgm", pred_mask.astype(np.uint8))


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(path, state: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    """Header (magic, version, metadata JSON, record count) then (name, shape, float32 data) records."""
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<II", CKPT_VERSION, len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<I", len(state)))
        for name, arr in state.items():
            a = np.ascontiguousarray(arr, dtype="<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", a.ndim))
            f.write(struct.pack(f"<{a.ndim}I", *a.shape))
            f.write(a.tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, meta_len = struct.unpack_from("<II", raw, 8)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    meta = json.loads(raw[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    state = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        name = raw[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        n = int(np.prod(shape, dtype=np.int64))
        state[name] = np.frombuffer(raw, dtype="<f4", count=n, offset=pos).reshape(shape).astype(np.float32)
        pos += 4 * n
    if pos != len(raw):
        raise ValueError(f"{path}: trailing bytes after last record")
    return state, meta


# -- key = value configs -------------------------------------------------------

def parse_config_text(text: str, known: Iterable[str]) -> dict[str, str]:
    known = set(known)
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def read_config_file(path, known: Iterable[str]) -> dict[str, str]:
    return parse_config_text(Path(path).read_text(), known)


# -- metrics CSV ---------------------------------------------------------------

def write_metrics_csv(path, rows: Iterable[Mapping]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=METRICS_HEADER)
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k)) for k in METRICS_HEADER})


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v
