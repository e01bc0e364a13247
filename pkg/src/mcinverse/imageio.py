"""Image buffers, bilinear textures, and PFM / PNG / OBJ file I/O.

Conventions used throughout the package:

* images are ``(height, width, channels)`` arrays, row 0 at the top;
* texture coordinates ``uv`` put ``v = 0`` on row 0 (the zenith row of an
  environment probe); OBJ ``vt`` records are used as-is, so OBJ round trips
  stay bit-exact;
* texel ``(i, j)`` has its center at ``uv = ((j + 0.5) / W, (i + 0.5) / H)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ImageIOError(ValueError):
    """Malformed or unreadable image / mesh file."""


@dataclass
class ImageBuffer:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[..., None]
        if data.ndim != 3 or data.shape[2] not in (1, 3, 4):
            raise ValueError(f"image must be HxWxC with C in (1, 3, 4), got {data.shape}")
        if not np.all(np.isfinite(data)):
            bad = int(np.flatnonzero(~np.isfinite(data.reshape(-1)))[0])
            raise ValueError(f"non-finite value at flat index {bad}")
        self.data = data

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass
class Texture2D:
    """Texel grid plus address mode.

    ``address`` is ``"clamp"`` (materials) or ``"wrap"`` (probes: wrap in u,
    clamp in v).
    """

    data: np.ndarray
    address: str = "clamp"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[..., None]
        if data.ndim != 3 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"texture must be HxWxC with H, W >= 1, got {data.shape}")
        if self.address not in ("clamp", "wrap"):
            raise ValueError(f"unknown address mode {self.address!r}")
        self.data = data

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def copy(self) -> "Texture2D":
        return Texture2D(self.data.copy(), self.address)

    def taps(self, uv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Flat texel indices ``(N, 4)`` and bilinear weights ``(N, 4)``."""
        H, W, _ = self.data.shape
        uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
        x = uv[:, 0] * W - 0.5
        y = uv[:, 1] * H - 0.5
        x0 = np.floor(x)
        y0 = np.floor(y)
        fx = x - x0
        fy = y - y0
        x0 = x0.astype(np.int64)
        y0 = y0.astype(np.int64)
        x1 = x0 + 1
        y1 = y0 + 1
        if self.address == "wrap":
            x0 %= W
            x1 %= W
        else:
            x0 = np.clip(x0, 0, W - 1)
            x1 = np.clip(x1, 0, W - 1)
        y0 = np.clip(y0, 0, H - 1)
        y1 = np.clip(y1, 0, H - 1)
        idx = np.stack([y0 * W + x0, y0 * W + x1, y1 * W + x0, y1 * W + x1], axis=1)
        w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1)
        return idx, w

    def gather(self, idx: np.ndarray, w: np.ndarray) -> np.ndarray:
        flat = self.data.reshape(-1, self.data.shape[2])
        return np.einsum("nk,nkc->nc", w, flat[idx])

    def sample(self, uv: np.ndarray) -> np.ndarray:
        return self.gather(*self.taps(uv))

    def scatter(self, idx: np.ndarray, w: np.ndarray, grad: np.ndarray,
                out: np.ndarray | None = None) -> np.ndarray:
        """Adjoint of :meth:`gather`: deposit ``w * grad`` onto the taps."""
        H, W, C = self.data.shape
        if out is None:
            out = np.zeros((H, W, C))
        grad = np.asarray(grad, dtype=np.float64).reshape(-1, C)
        flat_idx = idx.reshape(-1)
        for c in range(C):
            vals = (w * grad[:, c:c + 1]).reshape(-1)
            out[..., c] += np.bincount(flat_idx, weights=vals, minlength=H * W).reshape(H, W)
        return out


def bilinear_sample(tex: Texture2D, uv) -> np.ndarray:
    """Bilinear lookup; ``uv`` may be a single pair or an ``(N, 2)`` array."""
    uv = np.asarray(uv, dtype=np.float64)
    out = tex.sample(uv.reshape(-1, 2))
    return out[0] if uv.ndim == 1 else out


def bilinear_adjoint(tex: Texture2D, uv, grad) -> np.ndarray:
    """Gradient w.r.t. texels of ``sum(grad * bilinear_sample(tex, uv))``."""
    idx, w = tex.taps(np.asarray(uv, dtype=np.float64).reshape(-1, 2))
    return tex.scatter(idx, w, np.asarray(grad).reshape(len(idx), -1))


# --------------------------------------------------------------------------- PFM

def _read_token(buf: bytes, pos: int) -> tuple[str, int]:
    n = len(buf)
    while pos < n and buf[pos:pos + 1].isspace():
        pos += 1
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ImageIOError(f"PFM header truncated at byte offset {start}")
    return buf[start:pos].decode("ascii", errors="replace"), pos


def load_pfm(path) -> ImageBuffer:
    buf = Path(path).read_bytes()
    ident, pos = _read_token(buf, 0)
    if ident == "PF":
        channels = 3
    elif ident == "Pf":
        channels = 1
    else:
        raise ImageIOError(f"bad PFM magic {ident!r} at byte offset 0")
    tokens = []
    for _ in range(3):
        tok_start = pos
        tok, pos = _read_token(buf, pos)
        tokens.append((tok, tok_start))
    try:
        width = int(tokens[0][0])
        height = int(tokens[1][0])
    except ValueError:
        raise ImageIOError(f"bad PFM dimensions at byte offset {tokens[0][1]}") from None
    try:
        scale = float(tokens[2][0])
    except ValueError:
        raise ImageIOError(f"bad PFM scale at byte offset {tokens[2][1]}") from None
    if width <= 0 or height <= 0 or scale == 0.0:
        raise ImageIOError(f"invalid PFM header values at byte offset {tokens[0][1]}")
    pos += 1  # single whitespace byte ends the header
    count = width * height * channels
    if len(buf) - pos < 4 * count:
        raise ImageIOError(
            f"PFM payload truncated: need {4 * count} bytes from offset {pos}, "
            f"have {len(buf) - pos}")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
    data = data.reshape(height, width, channels)[::-1].astype(np.float32)
    finite = np.isfinite(data)
    if not finite.all():
        bad = int(np.flatnonzero(~finite.reshape(-1))[0])
        texel = bad // channels
        row, col = divmod(texel, width)
        file_row = height - 1 - row
        offset = pos + 4 * ((file_row * width + col) * channels + bad % channels)
        raise ImageIOError(
            f"non-finite value at texel {texel} (row {row}, col {col}), byte offset {offset}")
    return ImageBuffer(data)


def save_pfm(path, image) -> None:
    data = image.data if isinstance(image, ImageBuffer) else np.asarray(image)
    if data.ndim == 2:
        data = data[..., None]
    if data.shape[2] not in (1, 3):
        raise ValueError(f"PFM stores 1 or 3 channels, got {data.shape[2]}")
    height, width, channels = data.shape
    header = f"{'PF' if channels == 3 else 'Pf'}\n{width} {height}\n-1.0\n".encode("ascii")
    payload = np.ascontiguousarray(data[::-1], dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def save_png_tonemapped(path, image) -> None:
    """Tonemap with ``T(x) = srgb(log(x + 1))`` and write 8-bit PNG."""
    from PIL import Image

    from .loss import tonemap

    data = image.data if isinstance(image, ImageBuffer) else np.asarray(image)
    if data.ndim == 2:
        data = data[..., None]
    ldr = np.round(255.0 * np.clip(tonemap(np.asarray(data, dtype=np.float64)), 0.0, 1.0))
    ldr = ldr.astype(np.uint8)
    if ldr.shape[2] == 1:
        Image.fromarray(ldr[..., 0], mode="L").save(path)
    else:
        Image.fromarray(ldr[..., :3], mode="RGB").save(path)


# --------------------------------------------------------------------------- OBJ

@dataclass
class MeshData:
    positions: np.ndarray
    indices: np.ndarray
    uvs: np.ndarray
    normals: np.ndarray = field(default=None)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.indices = np.asarray(self.indices, dtype=np.int64).reshape(-1, 3)
        self.uvs = np.asarray(self.uvs, dtype=np.float64).reshape(-1, 2)
        nv = len(self.positions)
        if len(self.uvs) != nv:
            raise ValueError("every vertex needs a UV")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= nv):
            raise ValueError("triangle index out of range")
        if self.normals is None:
            self.normals = area_weighted_normals(self.positions, self.indices)
        else:
            n = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            self.normals = n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)

    @property
    def num_triangles(self) -> int:
        return len(self.indices)


def area_weighted_normals(positions: np.ndarray, indices: np.ndarray) -> np.ndarray:
    p = positions[indices]
    fn = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])  # length = 2 * area
    n = np.zeros_like(positions)
    for k in range(3):
        np.add.at(n, indices[:, k], fn)
    length = np.linalg.norm(n, axis=1, keepdims=True)
    fallback = np.tile([0.0, 0.0, 1.0], (len(n), 1))
    return np.where(length > 0, n / np.where(length > 0, length, 1.0), fallback)


def _obj_index(tok: str, count: int, lineno: int) -> int:
    i = int(tok)
    if i < 0:
        i += count
    else:
        i -= 1
    if not 0 <= i < count:
        raise ImageIOError(f"line {lineno}: index {tok} out of range")
    return i


def load_obj(path) -> MeshData:
    pos, tex, nrm = [], [], []
    corners: dict[tuple[int, int, int], int] = {}
    out_p, out_t, out_n, tris = [], [], [], []
    have_normals = True
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag, args = parts[0], parts[1:]
        try:
            if tag == "v":
                pos.append([float(a) for a in args[:3]])
            elif tag == "vt":
                tex.append([float(args[0]), float(args[1]) if len(args) > 1 else 0.0])
            elif tag == "vn":
                nrm.append([float(a) for a in args[:3]])
            elif tag == "f":
                if len(args) != 3:
                    raise ImageIOError(f"line {lineno}: face with {len(args)} vertices; "
                                       "only triangles are supported")
                tri = []
                for a in args:
                    fields_ = a.split("/")
                    if len(fields_) < 2 or not fields_[1]:
                        raise ImageIOError(f"line {lineno}: face corner {a!r} has no UV")
                    vi = _obj_index(fields_[0], len(pos), lineno)
                    ti = _obj_index(fields_[1], len(tex), lineno)
                    ni = -1
                    if len(fields_) > 2 and fields_[2]:
                        ni = _obj_index(fields_[2], len(nrm), lineno)
                    else:
                        have_normals = False
                    key = (vi, ti, ni)
                    if key not in corners:
                        corners[key] = len(out_p)
                        out_p.append(pos[vi])
                        out_t.append(tex[ti])
                        out_n.append(nrm[ni] if ni >= 0 else [0.0, 0.0, 0.0])
                    tri.append(corners[key])
                tris.append(tri)
        except (ValueError, IndexError) as exc:
            if isinstance(exc, ImageIOError):
                raise
            raise ImageIOError(f"line {lineno}: cannot parse {raw!r}") from None
    if not tris:
        raise ImageIOError("OBJ contains no faces")
    return MeshData(np.asarray(out_p), np.asarray(tris), np.asarray(out_t),
                    np.asarray(out_n) if have_normals else None)


def save_obj(path, mesh: MeshData) -> None:
    lines = []
    for p in mesh.positions:
        lines.append("v {} {} {}".format(*map(repr, map(float, p))))
    for t in mesh.uvs:
        lines.append("vt {} {}".format(repr(float(t[0])), repr(float(t[1]))))
    for n in mesh.normals:
        lines.append("vn {} {} {}".format(*map(repr, map(float, n))))
    for a, b, c in mesh.indices + 1:
        lines.append(f"f {a}/{a}/{a} {b}/{b}/{b} {c}/{c}/{c}")
    Path(path).write_text("\n".join(lines) + "\n")
