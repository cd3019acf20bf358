"""File formats: MLCT tensors, operator bundles, model manifests, PNM images, CSV.

MLCT tensor layout (all little-endian)::

    b"MLCT" | u32 ndim | ndim x u32 extents | row-major float64 data

An operator bundle reuses the container: ``b"MLCT"``, the sentinel
``ndim = 0xFFFFFFFF``, a u32 byte length, a UTF-8 JSON header, then a
payload of plain MLCT tensor records. The header describes the operator
tree; each tensor is referenced by ``{"offset", "length"}`` relative to the
payload start.
"""

from __future__ import annotations

import configparser
import csv
import json
import os
import struct

import numpy as np

from . import jpeg, linop, trajectory
from .solver import ModelParams

__all__ = [
    "FormatError",
    "TruncatedPayloadError",
    "encode_tensor",
    "decode_tensor",
    "write_tensor",
    "read_tensor",
    "encode_operator",
    "decode_operator",
    "write_operator",
    "read_operator",
    "save_params",
    "load_params",
    "read_image",
    "write_image",
    "write_trajectories",
    "read_trajectories",
    "write_observations",
    "read_observations",
    "write_cameras",
    "read_cameras",
    "write_csv",
]

MAGIC = b"MLCT"
BUNDLE = 0xFFFFFFFF


class FormatError(ValueError):
    """Malformed file contents."""


class TruncatedPayloadError(FormatError):
    """The file ends before the payload its header announces."""


# -- tensors -----------------------------------------------------------------

def encode_tensor(array) -> bytes:
    array = np.asarray(array, dtype="<f8", order="C")
    head = MAGIC + struct.pack("<I", array.ndim) + struct.pack(f"<{array.ndim}I", *array.shape)
    return head + array.tobytes()


def decode_tensor(buf: bytes, offset: int = 0):
    """Decode one tensor record at ``offset``; returns ``(array, end_offset)``."""
    if buf[offset:offset + 4] != MAGIC:
        raise FormatError(f"bad magic {bytes(buf[offset:offset + 4])!r}, expected {MAGIC!r}")
    if len(buf) < offset + 8:
        raise TruncatedPayloadError("file ends inside the MLCT header")
    (ndim,) = struct.unpack_from("<I", buf, offset + 4)
    if ndim == BUNDLE:
        raise FormatError("file holds an operator bundle, not a tensor")
    pos = offset + 8
    if len(buf) < pos + 4 * ndim:
        raise TruncatedPayloadError(f"file ends inside the extents of a {ndim}-d tensor")
    shape = struct.unpack_from(f"<{ndim}I", buf, pos)
    pos += 4 * ndim
    nbytes = 8 * int(np.prod(shape, dtype=np.int64))
    if len(buf) < pos + nbytes:
        raise TruncatedPayloadError(
            f"payload length {len(buf) - pos} bytes, header announces {nbytes}")
    data = np.frombuffer(buf, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape)
    return data.astype(np.float64), pos + nbytes


def write_tensor(path, array) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_tensor(array))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    array, end = decode_tensor(buf)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes after tensor payload")
    return array


# -- operators ---------------------------------------------------------------

class _Payload:
    def __init__(self):
        self.chunks = []
        self.size = 0

    def add(self, array):
        rec = encode_tensor(array)
        ref = {"offset": self.size, "length": len(rec)}
        self.chunks.append(rec)
        self.size += len(rec)
        return ref


def _node(op, payload: _Payload) -> dict:
    node = {"kind": op.kind, "in_shape": list(op.in_shape), "out_shape": list(op.out_shape)}
    kind = op.kind
    if kind == "identity":
        pass
    elif kind == "diagonal-mask":
        node["mask"] = payload.add(op.mask)
    elif kind == "blockwise-dense":
        node["block_edge"] = op.block_edge
        node["matrices"] = payload.add(op.matrices)
    elif kind == "jpeg-pipeline":
        node["height"], node["width"] = op.height, op.width
        node["mask"] = payload.add(op.mask)
    elif kind == "composition":
        node["children"] = [_node(op.outer, payload), _node(op.inner, payload)]
    elif kind == "blend":
        node["alpha"] = op.alpha
        node["children"] = [_node(c, payload) for c in op.ops]
    elif kind == "linear-combination":
        node["weights"] = list(op.weights)
        node["children"] = [_node(c, payload) for c in op.ops]
    elif kind == "stacked":
        node["children"] = [_node(c, payload) for c in op.ops]
    elif kind == "adjoint":
        node["children"] = [_node(op.op, payload)]
    elif kind == "convolution":
        node["filters"] = payload.add(op.dictionary.filters)
    elif kind in ("chroma-downsample", "block-dct"):
        node["height"], node["width"] = op.height, op.width
    elif kind == "camera-stack":
        node["fps"] = op.cameras.fps
        node["center"] = list(op.cameras.center)
        node["matrices"] = payload.add(op.cameras.matrices)
    else:
        raise FormatError(f"no serializer for operator kind {kind!r}")
    return node


def _build(node: dict, payload: bytes):
    def tensor(key):
        ref = node[key]
        start = ref["offset"]
        array, end = decode_tensor(payload, start)
        if end - start != ref["length"]:
            raise FormatError(f"tensor {key!r} length mismatch")
        return array

    def children():
        return [_build(c, payload) for c in node["children"]]

    kind = node.get("kind")
    if kind == "identity":
        op = linop.Identity(node["in_shape"])
    elif kind == "diagonal-mask":
        op = linop.DiagonalMask(tensor("mask"))
    elif kind == "blockwise-dense":
        op = linop.BlockwiseDense(tensor("matrices"), node["block_edge"])
    elif kind == "jpeg-pipeline":
        op = jpeg.JPEGOperator(node["height"], node["width"], tensor("mask"))
    elif kind == "composition":
        op = linop.Composition(*children())
    elif kind == "blend":
        op = linop.Blend(*children(), node["alpha"])
    elif kind == "linear-combination":
        op = linop.LinearCombination(node["weights"], children())
    elif kind == "stacked":
        op = linop.Stacked(children())
    elif kind == "adjoint":
        op = children()[0].T
    elif kind == "convolution":
        op = linop.ConvolutionOperator(tensor("filters"), node["in_shape"])
    elif kind == "chroma-downsample":
        op = jpeg.ChromaDownsample(node["height"], node["width"])
    elif kind == "block-dct":
        op = jpeg.BlockDCT(node["height"], node["width"])
    elif kind == "camera-stack":
        cams = trajectory.CameraSequence(tensor("matrices"), node["fps"], tuple(node["center"]))
        op = trajectory.CameraStack(cams)
    else:
        raise FormatError(f"unknown operator kind {kind!r}")
    if list(op.in_shape) != node["in_shape"] or list(op.out_shape) != node["out_shape"]:
        raise FormatError(f"{kind}: stored shapes disagree with the rebuilt operator")
    return op


def encode_operator(op) -> bytes:
    payload = _Payload()
    header = {"format": "mlct-operator", "version": 1, "root": _node(op, payload)}
    text = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<II", BUNDLE, len(text)) + text + b"".join(payload.chunks)


def decode_operator(buf: bytes):
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}")
    if len(buf) < 12:
        raise TruncatedPayloadError("file ends inside the operator bundle header")
    marker, length = struct.unpack_from("<II", buf, 4)
    if marker != BUNDLE:
        raise FormatError("file holds a plain tensor, not an operator bundle")
    if len(buf) < 12 + length:
        raise TruncatedPayloadError("file ends inside the JSON header")
    try:
        header = json.loads(buf[12:12 + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"operator header is not valid JSON: {exc}") from None
    if header.get("format") != "mlct-operator":
        raise FormatError("operator header has the wrong format tag")
    return _build(header["root"], buf[12 + length:])


def write_operator(path, op) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_operator(op))


def read_operator(path):
    with open(path, "rb") as fh:
        return decode_operator(fh.read())


# -- model parameters ---------------------------------------------------------

def save_params(params: ModelParams, directory) -> None:
    """Write ``manifest.txt`` plus one MLCT file per dictionary and bias."""
    os.makedirs(directory, exist_ok=True)
    cfg = configparser.ConfigParser()
    cfg["model"] = {"n_layers": str(params.n_layers), "n_sweeps": str(params.n_sweeps)}
    for i in range(params.n_layers):
        name = f"layer{i + 1}"
        write_tensor(os.path.join(directory, f"D{i + 1}.mlct"), params.dictionaries[i])
        write_tensor(os.path.join(directory, f"b{i + 1}.mlct"), params.biases[i])
        cfg[name] = {
            "filters": f"D{i + 1}.mlct",
            "filter_shape": ",".join(map(str, params.dictionaries[i].shape)),
            "bias": f"b{i + 1}.mlct",
            "lipschitz": repr(float(params.lipschitz[i])),
            "extrapolation": repr(float(params.extrapolation[i])),
            "alpha": repr(float(params.alphas[i])),
        }
    with open(os.path.join(directory, "manifest.txt"), "w") as fh:
        cfg.write(fh)


def load_params(directory) -> ModelParams:
    path = os.path.join(directory, "manifest.txt")
    cfg = configparser.ConfigParser()
    if not cfg.read(path):
        raise FormatError(f"missing model manifest {path}")
    try:
        n = cfg.getint("model", "n_layers")
        sweeps = cfg.getint("model", "n_sweeps")
        dicts, biases, lips, ws, alphas = [], [], [], [], []
        for i in range(n):
            sec = cfg[f"layer{i + 1}"]
            d = read_tensor(os.path.join(directory, sec["filters"]))
            shape = tuple(int(s) for s in sec["filter_shape"].split(","))
            if d.shape != shape:
                raise FormatError(f"layer {i + 1} filters have shape {d.shape}, manifest says {shape}")
            dicts.append(d)
            biases.append(read_tensor(os.path.join(directory, sec["bias"])))
            lips.append(float(sec["lipschitz"]))
            ws.append(float(sec["extrapolation"]))
            alphas.append(float(sec["alpha"]))
    except (KeyError, configparser.Error) as exc:
        raise FormatError(f"incomplete model manifest: {exc}") from None
    return ModelParams(dicts, biases, lips, ws, alphas, sweeps)


# -- images -------------------------------------------------------------------

def _pnm_tokens(buf: bytes, count: int):
    tokens, pos = [], 2
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("PNM header ends early")
        tokens.append(buf[start:pos])
    return tokens, pos + 1


def read_image(path) -> np.ndarray:
    """Binary PGM (P5) or PPM (P6), 8-bit, as ``(C, H, W)`` floats ``value / 255``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"not a binary PGM/PPM file (magic {magic!r})")
    channels = 1 if magic == b"P5" else 3
    tokens, pos = _pnm_tokens(buf, 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError(f"bad PNM header fields {tokens!r}") from None
    if maxval != 255:
        raise FormatError(f"only 8-bit PNM (maxval 255) is supported, got maxval {maxval}")
    n = width * height * channels
    if len(buf) < pos + n:
        raise TruncatedPayloadError(f"PNM payload has {len(buf) - pos} bytes, expected {n}")
    data = np.frombuffer(buf, dtype=np.uint8, count=n, offset=pos)
    return data.reshape(height, width, channels).transpose(2, 0, 1) / 255.0


def write_image(path, image) -> None:
    """Write ``(C, H, W)`` values in [0, 1] (C = 1 or 3) as 8-bit PGM/PPM."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[None]
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise FormatError(f"image must be (1|3, H, W), got {image.shape}")
    c, h, w = image.shape
    data = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    magic = b"P5" if c == 1 else b"P6"
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{w} {h}\n255\n".encode("ascii") + data.tobytes())


# -- CSV ----------------------------------------------------------------------

def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_points(path, array, names):
    array = np.asarray(array, dtype=np.float64)
    if array.ndim == 2:
        array = array[None]
    if array.ndim != 3 or array.shape[1] != len(names):
        raise FormatError(f"expected (P, {len(names)}, F) array, got {array.shape}")
    rows = ((f, p, *array[p, :, f]) for f in range(array.shape[2]) for p in range(array.shape[0]))
    write_csv(path, ["frame", "point", *names], rows)


def _read_points(path, names):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["frame", "point", *names]:
            raise FormatError(f"expected header {['frame', 'point', *names]}, got {header}")
        rows = [r for r in reader if r]
    try:
        frames = [int(r[0]) for r in rows]
        points = [int(r[1]) for r in rows]
        values = np.array([[float(v) for v in r[2:]] for r in rows]).reshape(len(rows), len(names))
    except (ValueError, IndexError):
        raise FormatError(f"malformed row in {path}") from None
    out = np.full((max(points) + 1, len(names), max(frames) + 1), np.nan)
    out[points, :, frames] = values
    if np.isnan(out).any():
        raise FormatError(f"{path} does not cover every (frame, point) pair")
    return out


def write_trajectories(path, points) -> None:
    """Ground-truth points ``(P, 3, F)`` as CSV ``frame,point,x,y,z``."""
    _write_points(path, points, ["x", "y", "z"])


def read_trajectories(path) -> np.ndarray:
    return _read_points(path, ["x", "y", "z"])


def write_observations(path, obs) -> None:
    """2-D observations ``(P, 2, F)`` as CSV ``frame,point,u,v``."""
    _write_points(path, obs, ["u", "v"])


def read_observations(path) -> np.ndarray:
    return _read_points(path, ["u", "v"])


_CAM_COLS = ["m11", "m12", "m13", "m21", "m22", "m23"]


def write_cameras(path, cams) -> None:
    rows = ((f, *m.ravel()) for f, m in enumerate(cams.matrices))
    write_csv(path, ["frame", *_CAM_COLS], rows)


def read_cameras(path, fps: float = 30.0) -> "trajectory.CameraSequence":
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["frame", *_CAM_COLS]:
            raise FormatError(f"expected header {['frame', *_CAM_COLS]}, got {header}")
        rows = sorted(([float(v) for v in r] for r in reader if r), key=lambda r: r[0])
    mats = np.array([r[1:] for r in rows]).reshape(-1, 2, 3)
    return trajectory.CameraSequence(mats, fps)
