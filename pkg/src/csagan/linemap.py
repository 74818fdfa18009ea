"""Line-map preprocessing: probability edge maps, thinning, exact Euclidean
distance fields, condition pyramids, and dataset splitting.

All functions here are pure; the same inputs and seed always produce
bit-identical outputs.
"""
from __future__ import annotations

import logging
import math
import os
import struct
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

CSDF_MAGIC = b"CSDF"


class PipelineError(ValueError):
    pass


# ---------------------------------------------------------------------------
# edge detection (stand-in for a learned probability-edge detector)

def detect_edges(photo: np.ndarray) -> np.ndarray:
    """Normalized gradient-magnitude probability map in [0,1].

    photo: [H,W,3] (or [H,W]) array, any numeric range.
    """
    photo = np.asarray(photo, dtype=np.float64)
    if photo.size == 0:
        raise PipelineError("detect_edges: empty image")
    if photo.ndim == 3:
        gray = photo.mean(axis=2)
    elif photo.ndim == 2:
        gray = photo
    else:
        raise PipelineError(f"detect_edges: expected 2-D or 3-D image, got {photo.ndim}-D")
    if gray.shape[0] < 16 or gray.shape[1] < 16:
        raise PipelineError(f"detect_edges: image too small {gray.shape}")

    # 3x3 binomial smoothing, edge-replicated
    k = np.array([1.0, 2.0, 1.0]) / 4.0
    sm = _sep_filter(gray, k)
    gx = _sep_filter_axis(sm, np.array([-0.5, 0.0, 0.5]), axis=1)
    gy = _sep_filter_axis(sm, np.array([-0.5, 0.0, 0.5]), axis=0)
    mag = np.hypot(gx, gy)
    top = mag.max()
    if top > 0:
        mag = mag / top
    return mag


def _sep_filter(img, k):
    return _sep_filter_axis(_sep_filter_axis(img, k, 0), k, 1)


def _sep_filter_axis(img, k, axis):
    pad = len(k) // 2
    padded = np.pad(img, [(pad, pad) if ax == axis else (0, 0) for ax in range(img.ndim)], mode="edge")
    out = np.zeros_like(img)
    for i, kv in enumerate(k):
        sl = [slice(None)] * img.ndim
        sl[axis] = slice(i, i + img.shape[axis])
        out += kv * padded[tuple(sl)]
    return out


# ---------------------------------------------------------------------------
# thresholding + thinning + fragment removal

def extract_linemap(prob: np.ndarray, tau: float, l_min: int = 10, opening: bool = False) -> np.ndarray:
    """Boolean line mask: threshold at tau, thin to single-pixel width,
    drop 8-connected components smaller than l_min pixels."""
    prob = np.asarray(prob, dtype=np.float64)
    if not (0.0 <= tau <= 1.0):
        raise PipelineError(f"tau must be in [0,1], got {tau}")
    if l_min < 1:
        raise PipelineError("l_min must be >= 1")
    mask = prob > tau
    if opening:
        mask = _binary_dilate(_binary_erode(mask))
    mask = thin(mask)
    return remove_small_components(mask, l_min)


def _binary_erode(mask):
    p = np.pad(mask, 1, constant_values=False)
    out = mask.copy()
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            out &= p[1 + di:1 + di + mask.shape[0], 1 + dj:1 + dj + mask.shape[1]]
    return out


def _binary_dilate(mask):
    p = np.pad(mask, 1, constant_values=False)
    out = np.zeros_like(mask)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            out |= p[1 + di:1 + di + mask.shape[0], 1 + dj:1 + dj + mask.shape[1]]
    return out


def _neighbors(p):
    """Clockwise 8-neighborhood P2..P9 of the padded mask p (N, NE, E, ...)."""
    h, w = p.shape[0] - 2, p.shape[1] - 2
    def s(di, dj):
        return p[1 + di:1 + di + h, 1 + dj:1 + dj + w]
    return [s(-1, 0), s(-1, 1), s(0, 1), s(1, 1), s(1, 0), s(1, -1), s(0, -1), s(-1, -1)]


def thin(mask: np.ndarray) -> np.ndarray:
    """Zhang-Suen thinning: iterative boundary peeling with
    connectivity-preserving deletion tests."""
    img = mask.astype(bool).copy()
    while True:
        changed = False
        for phase in (0, 1):
            p = np.pad(img, 1, constant_values=False)
            nb = _neighbors(p)
            b = sum(n.astype(np.uint8) for n in nb)
            ring = nb + [nb[0]]
            a = sum(((~ring[i]) & ring[i + 1]).astype(np.uint8) for i in range(8))
            p2, p4, p6, p8 = nb[0], nb[2], nb[4], nb[6]
            if phase == 0:
                c1 = ~(p2 & p4 & p6)
                c2 = ~(p4 & p6 & p8)
            else:
                c1 = ~(p2 & p4 & p8)
                c2 = ~(p2 & p6 & p8)
            kill = img & (b >= 2) & (b <= 6) & (a == 1) & c1 & c2
            if kill.any():
                img &= ~kill
                changed = True
        if not changed:
            return img


def label_components(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connected component labels (0 = background), by flood fill."""
    labels = np.zeros(mask.shape, dtype=np.int32)
    current = 0
    h, w = mask.shape
    for i in range(h):
        for j in range(w):
            if mask[i, j] and labels[i, j] == 0:
                current += 1
                stack = [(i, j)]
                labels[i, j] = current
                while stack:
                    ci, cj = stack.pop()
                    for di in (-1, 0, 1):
                        for dj in (-1, 0, 1):
                            ni, nj = ci + di, cj + dj
                            if 0 <= ni < h and 0 <= nj < w and mask[ni, nj] and labels[ni, nj] == 0:
                                labels[ni, nj] = current
                                stack.append((ni, nj))
    return labels, current


def remove_small_components(mask: np.ndarray, l_min: int) -> np.ndarray:
    labels, n = label_components(mask)
    if n == 0:
        return mask.astype(bool)
    counts = np.bincount(labels.ravel(), minlength=n + 1)
    keep = counts >= l_min
    keep[0] = False
    return keep[labels]


# ---------------------------------------------------------------------------
# exact Euclidean distance transform (two-pass separable lower envelope)

def _edt_1d(f: np.ndarray) -> np.ndarray:
    """Lower envelope of parabolas rooted at (i, f[i]); returns squared
    distances."""
    n = f.shape[0]
    d = np.empty(n)
    v = np.zeros(n, dtype=np.int64)
    z = np.empty(n + 1)
    k = 0
    z[0], z[1] = -math.inf, math.inf
    for q in range(1, n):
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
        while s <= z[k]:
            k -= 1
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = math.inf
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d[q] = (q - v[k]) ** 2 + f[v[k]]
    return d


def distance_field(lines: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance to the nearest line pixel.  An empty line
    map yields the diagonal sentinel everywhere."""
    mask = np.asarray(lines, dtype=bool)
    h, w = mask.shape
    d_max = math.sqrt(h * h + w * w)
    if not mask.any():
        return np.full((h, w), d_max)
    big = 1e18
    f = np.where(mask, 0.0, big)
    # columns, then rows
    for j in range(w):
        f[:, j] = _edt_1d(f[:, j])
    for i in range(h):
        f[i, :] = _edt_1d(f[i, :])
    return np.sqrt(f)


def max_distance(h: int, w: int) -> float:
    return math.sqrt(h * h + w * w)


# ---------------------------------------------------------------------------
# condition pyramid

def build_condition_pyramid(field: np.ndarray, scales) -> list[tuple[int, np.ndarray]]:
    """Average-pool the normalized field down by each scale factor.
    Values are divided by the diagonal sentinel so every level sits in [0,1]."""
    field = np.asarray(field, dtype=np.float64)
    h, w = field.shape
    norm = field / max_distance(h, w)
    levels = []
    for s in sorted(scales):
        if s < 1 or h % s or w % s:
            raise PipelineError(f"scale {s} does not divide field extents {h}x{w}")
        lvl = norm.reshape(h // s, s, w // s, s).mean(axis=(1, 3))
        levels.append((s, lvl))
    return levels


# ---------------------------------------------------------------------------
# dataset listing / splitting and image I/O

IMAGE_EXTS = {".png", ".jpg", ".jpeg", ".bmp"}


def load_photo(path, side: int | None = None) -> np.ndarray:
    """RGB float array in [0,1]; optional center-crop to square + resize."""
    img = Image.open(path).convert("RGB")
    if side is not None:
        wdt, hgt = img.size
        c = min(wdt, hgt)
        left, top = (wdt - c) // 2, (hgt - c) // 2
        img = img.crop((left, top, left + c, top + c)).resize((side, side), Image.BILINEAR)
    return np.asarray(img, dtype=np.float64) / 255.0


def save_png(path, array: np.ndarray) -> None:
    """Atomic PNG write of a [0,1] float array (grayscale or RGB)."""
    arr = np.clip(np.asarray(array), 0.0, 1.0)
    data = (arr * 255.0 + 0.5).astype(np.uint8)
    img = Image.fromarray(data)
    tmp = str(path) + ".tmp"
    img.save(tmp, format="PNG")
    os.replace(tmp, path)


def make_dataset(photo_dir, split_ratio: float, seed: int, side: int = 256):
    """Deterministic shuffle and disjoint split of the readable images in a
    directory.  Returns (train_paths, test_paths)."""
    if not (0.0 < split_ratio < 1.0):
        raise PipelineError(f"split_ratio must be in (0,1), got {split_ratio}")
    photo_dir = Path(photo_dir)
    if not photo_dir.is_dir():
        raise PipelineError(f"not a directory: {photo_dir}")
    paths = sorted(p for p in photo_dir.iterdir() if p.suffix.lower() in IMAGE_EXTS)
    readable = []
    for p in paths:
        try:
            with Image.open(p) as img:
                img.verify()
            readable.append(p)
        except Exception as exc:  # corrupt file: skip, keep going
            log.warning("skipping unreadable image %s: %s", p, exc)
    if len(readable) < 2:
        raise PipelineError(f"need at least 2 readable images in {photo_dir}, found {len(readable)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(readable))
    n_train = int(round(len(readable) * split_ratio))
    n_train = min(max(n_train, 1), len(readable) - 1)
    train = [readable[i] for i in order[:n_train]]
    test = [readable[i] for i in order[n_train:]]
    return train, test


# ---------------------------------------------------------------------------
# CSDF binary distance-field format

def save_distance_field(path, field: np.ndarray) -> None:
    field = np.asarray(field, dtype=np.float32)
    h, w = field.shape
    payload = CSDF_MAGIC + struct.pack("<II", h, w) + field.tobytes(order="C")
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def load_distance_field(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CSDF_MAGIC:
        raise PipelineError(f"{path}: bad magic")
    h, w = struct.unpack("<II", blob[4:12])
    want = 12 + 4 * h * w
    if len(blob) != want:
        raise PipelineError(f"{path}: expected {want} bytes, found {len(blob)}")
    return np.frombuffer(blob[12:], dtype="<f4").reshape(h, w).astype(np.float64)
