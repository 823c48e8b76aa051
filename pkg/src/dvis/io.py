"""File formats: PFM label maps, 16-bit PGM ground truth, PPM renders,
checkpoints, run-length-encoded detections and run manifests."""
from __future__ import annotations

import colorsys
import datetime
import json
import os
import struct

import numpy as np

from .grid import GroundTruthMap


class FormatError(ValueError):
    """A file does not follow the expected format."""


def _read_header_tokens(fh, count):
    """Read ``count`` whitespace-separated header tokens (netpbm style, # comments)."""
    tokens = []
    while len(tokens) < count:
        line = fh.readline()
        if not line:
            raise FormatError("unexpected end of header")
        line = line.split(b"#", 1)[0]
        tokens.extend(line.split())
    if len(tokens) != count:
        raise FormatError("malformed header")
    return [t.decode("ascii") for t in tokens]


# -- PFM ------------------------------------------------------------------

def write_float_map(path, data):
    """Write a ``Pf`` (grayscale) or ``PF`` (3-channel) little-endian PFM."""
    arr = np.asarray(data)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim == 2:
        tag = "Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        tag = "PF"
    else:
        raise FormatError(f"PFM holds 1 or 3 channels, got shape {arr.shape}")
    h, w = arr.shape[:2]
    # PFM stores rows bottom to top
    payload = np.ascontiguousarray(np.flipud(arr), dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(f"{tag}\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(payload)


def read_float_map(path):
    with open(path, "rb") as fh:
        tag = fh.readline().strip()
        if tag not in (b"Pf", b"PF"):
            raise FormatError(f"not a PFM file: {path}")
        w, h = (int(t) for t in _read_header_tokens(fh, 2))
        scale = float(_read_header_tokens(fh, 1)[0])
        if scale == 0:
            raise FormatError("PFM scale must be non-zero")
        channels = 1 if tag == b"Pf" else 3
        n = w * h * channels
        buf = fh.read(4 * n)
    if len(buf) != 4 * n:
        raise FormatError(f"truncated PFM payload: {len(buf)} of {4 * n} bytes")
    arr = np.frombuffer(buf, dtype="<f4" if scale < 0 else ">f4").astype(np.float32)
    arr = arr.reshape((h, w) if channels == 1 else (h, w, 3))
    return np.flipud(arr).copy()


# -- PGM ground truth ---------------------------------------------------------

def _classes_path(path):
    root, _ = os.path.splitext(str(path))
    return root + ".json"


def write_gt_map(path, gt: GroundTruthMap):
    """16-bit ``P5`` PGM (big-endian samples) plus a ``{id: class}`` JSON sidecar."""
    ids = gt.ids
    if ids.max(initial=0) > 65535:
        raise FormatError("instance ids above 65535 do not fit a 16-bit PGM")
    h, w = ids.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(ids.astype(">u2").tobytes())
    with open(_classes_path(path), "w") as fh:
        json.dump({str(k): v for k, v in sorted(gt.classes.items())}, fh, indent=1)


def read_gt_map(path):
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"P5":
            raise FormatError(f"not a binary PGM: {path}")
        w, h, maxval = (int(t) for t in _read_header_tokens(fh, 3))
        if maxval != 65535:
            raise FormatError(f"ground truth PGM must have maxval 65535, got {maxval}")
        buf = fh.read(2 * w * h)
    if len(buf) != 2 * w * h:
        raise FormatError("truncated PGM payload")
    ids = np.frombuffer(buf, dtype=">u2").reshape(h, w).astype(np.int64)
    cpath = _classes_path(path)
    classes = {}
    if os.path.exists(cpath):
        with open(cpath) as fh:
            classes = {int(k): int(v) for k, v in json.load(fh).items()}
    try:
        return GroundTruthMap(ids, classes)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


# -- PPM renders ---------------------------------------------------------------

# viridis sampled at 9 points; linearly interpolated in between
_VIRIDIS = np.array([
    [68, 1, 84], [71, 44, 122], [59, 81, 139], [44, 113, 142], [33, 144, 141],
    [39, 173, 129], [92, 200, 99], [170, 220, 50], [253, 231, 37],
], dtype=np.float64)


def colormap(values, vmax=None):
    """Map values in ``[0, vmax]`` to 8-bit RGB with a fixed perceptual ramp."""
    v = np.asarray(values, dtype=np.float64)
    if vmax is None:
        vmax = float(v.max()) if v.size else 0.0
    t = np.zeros_like(v) if vmax <= 0 else np.clip(v / vmax, 0.0, 1.0)
    pos = t * (len(_VIRIDIS) - 1)
    lo = np.minimum(np.floor(pos).astype(int), len(_VIRIDIS) - 2)
    frac = (pos - lo)[..., None]
    rgb = _VIRIDIS[lo] * (1 - frac) + _VIRIDIS[lo + 1] * frac
    return np.round(rgb).astype(np.uint8)


def write_ppm(path, rgb):
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise FormatError("PPM needs an (H, W, 3) array")
    if rgb.dtype != np.uint8:
        rgb = np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)
    h, w = rgb.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rgb).tobytes())


def read_ppm(path):
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"P6":
            raise FormatError(f"not a binary PPM: {path}")
        w, h, maxval = (int(t) for t in _read_header_tokens(fh, 3))
        if maxval != 255:
            raise FormatError("only 8-bit PPM is supported")
        buf = fh.read(3 * w * h)
    if len(buf) != 3 * w * h:
        raise FormatError("truncated PPM payload")
    return np.frombuffer(buf, dtype=np.uint8).reshape(h, w, 3).copy()


def id_color(k):
    hue = (k * 0.618033988749895) % 1.0
    return np.array(colorsys.hsv_to_rgb(hue, 0.8, 1.0))


def render_label_map(f):
    return colormap(np.maximum(np.asarray(f, dtype=np.float64), 0.0))


def render_detections(shape, masks, image=None, opacity=0.6):
    """Per-detection hue overlay on ``image`` (or black)."""
    h, w = shape
    base = np.zeros((h, w, 3)) if image is None else np.asarray(image, dtype=np.float64)[:, :, :3]
    out = base.copy()
    for k, m in enumerate(masks, start=1):
        out[m] = (1 - opacity) * base[m] + opacity * id_color(k)
    return np.clip(np.round(out * 255.0), 0, 255).astype(np.uint8)


# -- run-length encoding -------------------------------------------------------

def rle_encode(mask):
    """Row-major runs alternating background/foreground, starting with background."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return [int(r) for r in runs]


def rle_decode(runs, shape):
    flat = np.zeros(int(np.prod(shape)), dtype=bool)
    pos = 0
    for i, r in enumerate(runs):
        if i % 2 == 1:
            flat[pos:pos + r] = True
        pos += r
    if pos != flat.size:
        raise FormatError(f"RLE covers {pos} pixels, expected {flat.size}")
    return flat.reshape(shape)


def detections_to_json(dets, shape):
    return {
        "height": int(shape[0]),
        "width": int(shape[1]),
        "detections": [
            {"class": int(d.label), "score": float(d.score), "s_cls": float(d.s_cls),
             "s_iou": float(d.s_iou), "mask": rle_encode(d.mask)}
            for d in dets
        ],
    }


def detections_from_json(obj):
    """Returns ``(shape, list of dicts with a decoded 'mask')``."""
    shape = (obj["height"], obj["width"])
    out = []
    for d in obj["detections"]:
        d = dict(d)
        d["mask"] = rle_decode(d["mask"], shape)
        out.append(d)
    return shape, out


# -- checkpoints -----------------------------------------------------------------

MAGIC = b"DVISCKPT1"


def save_checkpoint(path, sections, meta=None):
    """Write named parameter sections to a tagged little-endian container.

    Layout: ``DVISCKPT1``, u32 header length, UTF-8 JSON header, then every
    tensor as little-endian float64 in header order. ``sections`` maps a tag
    to a dict of arrays; ``meta`` is free-form JSON (configs, step counter).
    """
    tensors = []
    index = []
    for tag, arrays in sections.items():
        for name in sorted(arrays):
            arr = np.asarray(arrays[name], dtype="<f8")
            index.append({"section": tag, "name": name, "shape": list(arr.shape)})
            tensors.append(arr)
    header = json.dumps({"meta": meta or {}, "tensors": index}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for arr in tensors:
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path):
    """Returns ``(sections, meta)`` as written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise FormatError(f"not a checkpoint (bad magic): {path}")
        raw = fh.read(4)
        if len(raw) != 4:
            raise FormatError("truncated checkpoint header")
        (n,) = struct.unpack("<I", raw)
        header = json.loads(fh.read(n).decode("utf-8"))
        sections = {}
        for entry in header["tensors"]:
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise FormatError(f"truncated tensor {entry['section']}/{entry['name']}")
            arr = np.frombuffer(buf, dtype="<f8").reshape(entry["shape"]).astype(np.float64)
            sections.setdefault(entry["section"], {})[entry["name"]] = arr
    return sections, header["meta"]


# -- manifests -------------------------------------------------------------------

def write_manifest(out_dir, command, config, inputs, outputs, seed, version):
    manifest = {
        "command": command,
        "version": version,
        "seed": seed,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return path
