"""Core raster types, Netpbm I/O and the low-level image kernels.

Everything downstream (scoring, skeleton refinement, width recovery,
matching) is built from the primitives in this module: separable Gaussian
filtering with replicated borders, factor-2 bilinear upsampling, an exact
Euclidean distance transform, and Zhang-Suen thinning.  All functions are
pure: inputs are never modified and repeated calls give bit-identical
results.

Depth rasters are stored in millimetres.  On disk they are binary PGM (P5,
8- or 16-bit big-endian) plus an optional UTF-8 sidecar ``<file>.txt`` with
``key=value`` lines (``pitch``, ``depth_scale``) describing the pixel pitch
in mm and the mm-per-grey-level quantisation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DimError, FormatError, ParamError, TruncatedError

DEFAULT_PITCH_MM = 0.1
DEFAULT_DEPTH_SCALE_16BIT = 0.01


@dataclass(frozen=True)
class DepthImage:
    """Depth raster in millimetres on a fixed square pixel grid.

    ``pitch`` is the physical pixel spacing in mm; ``depth_scale`` records
    how many mm one grey level of the source file represents.
    """

    data: np.ndarray
    pitch: float = DEFAULT_PITCH_MM
    depth_scale: float = DEFAULT_DEPTH_SCALE_16BIT

    def __post_init__(self):
        data = np.ascontiguousarray(np.asarray(self.data, dtype=np.float64))
        if data.ndim != 2 or data.size == 0:
            raise ParamError("depth image must be a non-empty 2-D array")
        if not np.all(np.isfinite(data)):
            raise ParamError("depth values must be finite")
        if not (self.pitch > 0):
            raise ParamError("pixel pitch must be positive")
        if not (self.depth_scale > 0):
            raise ParamError("depth scale must be positive")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class BinaryMap:
    """Boolean raster (mask); pairs with a DepthImage of the same shape."""

    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(np.asarray(self.data, dtype=bool))
        if data.ndim != 2 or data.size == 0:
            raise ParamError("binary map must be a non-empty 2-D array")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class FloatMap:
    """Generic real-valued raster (heat maps, distance fields, responses)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(np.asarray(self.data, dtype=np.float64))
        if data.ndim != 2 or data.size == 0:
            raise ParamError("float map must be a non-empty 2-D array")
        if not np.all(np.isfinite(data)):
            raise ParamError("float map values must be finite")
        object.__setattr__(self, "data", data)


# ---------------------------------------------------------------------------
# Netpbm I/O
# ---------------------------------------------------------------------------


def _parse_pnm_header(raw: bytes, magic: bytes, path) -> tuple[list[int], int]:
    """Parse a binary PNM header; returns ([width, height, maxval], offset)."""
    if raw[:2] != magic:
        raise FormatError(f"{path}: expected {magic.decode()} magic, got {raw[:2]!r}")
    fields: list[int] = []
    i = 2
    n = len(raw)
    while len(fields) < 3:
        if i >= n:
            raise FormatError(f"{path}: header ended before width/height/maxval")
        c = raw[i : i + 1]
        if c == b"#":
            while i < n and raw[i : i + 1] not in (b"\n", b"\r"):
                i += 1
        elif c.isspace():
            i += 1
        elif c.isdigit():
            j = i
            while j < n and raw[j : j + 1].isdigit():
                j += 1
            fields.append(int(raw[i:j]))
            i = j
        else:
            raise FormatError(f"{path}: unexpected byte {c!r} in header")
    if i >= n or not raw[i : i + 1].isspace():
        raise FormatError(f"{path}: missing whitespace after maxval")
    return fields, i + 1


def read_sidecar(path) -> dict[str, str]:
    """Read the optional ``<path>.txt`` key=value sidecar; {} if absent."""
    side = Path(str(path) + ".txt")
    if not side.exists():
        return {}
    values: dict[str, str] = {}
    for line in side.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#") or "=" not in line:
            continue
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    return values


def write_sidecar(path, values: dict) -> None:
    side = Path(str(path) + ".txt")
    lines = [f"{k}={values[k]}" for k in sorted(values)]
    side.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_depth_pgm(path, pitch: float | None = None, depth_scale: float | None = None) -> DepthImage:
    """Load a binary PGM depth map.

    Grey levels are converted to mm as ``raw * depth_scale``.  The scale
    and pitch are resolved in order: explicit argument, sidecar file,
    default (0.01 mm/level for 16-bit files, 1.0 for 8-bit; 0.1 mm pitch).
    """
    raw = Path(path).read_bytes()
    (width, height, maxval), offset = _parse_pnm_header(raw, b"P5", path)
    if width < 1 or height < 1:
        raise FormatError(f"{path}: bad dimensions {width}x{height}")
    if maxval == 255:
        dtype, default_scale = np.uint8, 1.0
    elif maxval == 65535:
        dtype, default_scale = np.dtype(">u2"), DEFAULT_DEPTH_SCALE_16BIT
    else:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    dtype = np.dtype(dtype)
    count = width * height
    payload = raw[offset : offset + count * dtype.itemsize]
    if len(payload) < count * dtype.itemsize:
        raise TruncatedError(f"{path}: payload has {len(payload)} bytes, needs {count * dtype.itemsize}")
    levels = np.frombuffer(payload, dtype=dtype).reshape(height, width).astype(np.float64)

    side = read_sidecar(path)
    if depth_scale is None:
        depth_scale = float(side.get("depth_scale", default_scale))
    if pitch is None:
        pitch = float(side.get("pitch", DEFAULT_PITCH_MM))
    return DepthImage(levels * depth_scale, pitch=pitch, depth_scale=depth_scale)


def save_depth_pgm(depth: DepthImage, path, bits: int = 16) -> None:
    """Write a DepthImage as binary PGM plus its sidecar.

    Values are quantised as ``round(mm / depth_scale)`` and clipped to the
    sample range, so save/load round-trips are exact for images whose
    values are multiples of ``depth_scale``.
    """
    if bits not in (8, 16):
        raise ParamError("bits must be 8 or 16")
    maxval = 255 if bits == 8 else 65535
    levels = np.rint(depth.data / depth.depth_scale)
    levels = np.clip(levels, 0, maxval)
    sample = levels.astype(np.uint8 if bits == 8 else ">u2")
    header = f"P5\n{depth.width} {depth.height}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + sample.tobytes())
    write_sidecar(path, {"pitch": repr(depth.pitch), "depth_scale": repr(depth.depth_scale)})


def load_mask_pgm(path) -> BinaryMap:
    """Load a PGM as a boolean mask (any nonzero level is foreground)."""
    raw = Path(path).read_bytes()
    (width, height, maxval), offset = _parse_pnm_header(raw, b"P5", path)
    dtype = np.dtype(np.uint8) if maxval == 255 else np.dtype(">u2")
    if maxval not in (255, 65535):
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    count = width * height
    payload = raw[offset : offset + count * dtype.itemsize]
    if len(payload) < count * dtype.itemsize:
        raise TruncatedError(f"{path}: truncated mask payload")
    levels = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return BinaryMap(levels > 0)


def save_mask_pgm(mask: BinaryMap | np.ndarray, path) -> None:
    """Write a boolean mask as an 8-bit PGM (0 / 255)."""
    data = mask.data if isinstance(mask, BinaryMap) else np.asarray(mask, dtype=bool)
    sample = np.where(data, 255, 0).astype(np.uint8)
    header = f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + sample.tobytes())


def save_gray16_pgm(levels: np.ndarray, path) -> None:
    """Write integer grey levels (0..65535) as a 16-bit PGM."""
    arr = np.clip(np.rint(np.asarray(levels, dtype=np.float64)), 0, 65535).astype(">u2")
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + arr.tobytes())


def save_overlay_ppm(depth: DepthImage, mask: BinaryMap | np.ndarray, path) -> None:
    """Render depth as greyscale with mask pixels painted pure red (P6)."""
    mdata = mask.data if isinstance(mask, BinaryMap) else np.asarray(mask, dtype=bool)
    if mdata.shape != depth.data.shape:
        raise DimError(f"mask {mdata.shape} does not match depth {depth.data.shape}")
    lo = float(depth.data.min())
    hi = float(depth.data.max())
    if hi > lo:
        gray = np.rint(255.0 * (depth.data - lo) / (hi - lo)).astype(np.uint8)
    else:
        gray = np.full(depth.data.shape, 128, dtype=np.uint8)
    rgb = np.stack([gray, gray, gray], axis=-1)
    rgb[mdata] = (255, 0, 0)
    header = f"P6\n{depth.width} {depth.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + rgb.tobytes())


# ---------------------------------------------------------------------------
# Filtering and resampling
# ---------------------------------------------------------------------------


def gaussian_kernel(sigma: float, ksize: int) -> np.ndarray:
    """Sampled 1-D Gaussian of odd length ``ksize``, normalised to sum 1."""
    if ksize < 1 or ksize % 2 == 0:
        raise ParamError(f"kernel size must be odd and >= 1, got {ksize}")
    if not (sigma > 0):
        raise ParamError("sigma must be positive")
    half = ksize // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float, ksize: int) -> np.ndarray:
    """Separable Gaussian filter with replicated (edge) borders."""
    kernel = gaussian_kernel(sigma, ksize)
    data = np.asarray(img, dtype=np.float64)
    out = ndimage.correlate1d(data, kernel, axis=0, mode="nearest")
    return ndimage.correlate1d(out, kernel, axis=1, mode="nearest")


def _upsample2_axis0(a: np.ndarray) -> np.ndarray:
    """Factor-2 upsampling along axis 0: transposed convolution with the
    fixed 4-tap bilinear kernel (stride 2), replicated borders, output 2n."""
    n = a.shape[0]
    padded = np.concatenate([a[:1], a, a[-1:]], axis=0)
    full = np.zeros((2 * (n + 2) + 2,) + a.shape[1:], dtype=np.float64)
    for k, w in enumerate((0.25, 0.75, 0.75, 0.25)):
        full[k : k + 2 * (n + 2) : 2] += w * padded
    return full[3 : 3 + 2 * n]


def bilinear_upsample(img: np.ndarray) -> np.ndarray:
    """Double both raster dimensions with fixed bilinear interpolation.

    Constants are reproduced exactly; composing k applications scales the
    raster by 2**k (callers crop back to a target size when needed).
    """
    data = np.asarray(img, dtype=np.float64)
    if data.ndim != 2 or data.size == 0:
        raise ParamError("upsampling needs a non-empty 2-D map")
    out = _upsample2_axis0(data)
    return _upsample2_axis0(out.T).T


def downsample2_mean(img: np.ndarray) -> np.ndarray:
    """Halve both dimensions by 2x2 averaging (edge-replicated to even)."""
    data = np.asarray(img, dtype=np.float64)
    h, w = data.shape
    if h % 2:
        data = np.concatenate([data, data[-1:]], axis=0)
    if w % 2:
        data = np.concatenate([data, data[:, -1:]], axis=1)
    return 0.25 * (data[0::2, 0::2] + data[1::2, 0::2] + data[0::2, 1::2] + data[1::2, 1::2])


def crop_or_pad(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Origin-aligned crop or edge-pad of a raster to an exact size.

    Excess rows/columns are removed from the bottom/right and deficits are
    edge-padded there, mirroring where ``downsample2_mean`` extends odd
    inputs; this keeps upsample/downsample compositions registered with
    the original raster (no cumulative half-pixel drift).
    """
    data = np.asarray(img)
    h, w = data.shape
    if h > height:
        data = data[:height]
    elif h < height:
        data = np.pad(data, ((0, height - h), (0, 0)), mode="edge")
    if w > width:
        data = data[:, :width]
    elif w < width:
        data = np.pad(data, ((0, 0), (0, width - w)), mode="edge")
    return data


# ---------------------------------------------------------------------------
# Exact Euclidean distance transform
# ---------------------------------------------------------------------------


def _column_pass(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column vertical distance to the nearest true pixel, plus its row."""
    h, w = mask.shape
    dist = np.full((h, w), np.inf)
    row = np.full((h, w), -1, dtype=np.int64)
    dist[0][mask[0]] = 0.0
    row[0][mask[0]] = 0
    for i in range(1, h):
        dist[i] = np.where(mask[i], 0.0, dist[i - 1] + 1.0)
        row[i] = np.where(mask[i], i, row[i - 1])
    for i in range(h - 2, -1, -1):
        better = dist[i + 1] + 1.0 < dist[i]
        dist[i][better] = dist[i + 1][better] + 1.0
        row[i][better] = row[i + 1][better]
    return dist, row


def distance_and_feature(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact Euclidean distance transform with nearest-pixel coordinates.

    Returns ``(dist, feat_row, feat_col)`` where ``dist[y, x]`` is the exact
    Euclidean distance (in pixels) from ``(x, y)`` to the nearest true pixel
    and ``feat_row/feat_col`` give that pixel's coordinates.  An empty mask
    yields +inf distances and -1 features.

    Two-pass lower-envelope construction: a vertical scan provides the
    per-column squared distances, then each row is reduced with the
    parabola-envelope algorithm over columns.
    """
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2 or m.size == 0:
        raise ParamError("distance transform needs a non-empty 2-D mask")
    h, w = m.shape
    if not m.any():
        return (
            np.full((h, w), np.inf),
            np.full((h, w), -1, dtype=np.int64),
            np.full((h, w), -1, dtype=np.int64),
        )
    vert, vert_row = _column_pass(m)
    f = vert * vert  # squared vertical distances; inf where column empty

    dist2 = np.empty((h, w), dtype=np.float64)
    feat_col = np.empty((h, w), dtype=np.int64)
    v = np.empty(w, dtype=np.int64)  # parabola sites
    z = np.empty(w + 1, dtype=np.float64)  # envelope breakpoints

    for i in range(h):
        fi = f[i]
        cols = np.flatnonzero(np.isfinite(fi))
        if cols.size == 0:
            dist2[i] = np.inf
            feat_col[i] = -1
            continue
        k = 0
        v[0] = cols[0]
        z[0] = -np.inf
        z[1] = np.inf
        for q in cols[1:]:
            s = ((fi[q] + q * q) - (fi[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
            while s <= z[k]:
                k -= 1
                s = ((fi[q] + q * q) - (fi[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = np.inf
        k = 0
        for q in range(w):
            while z[k + 1] < q:
                k += 1
            x = v[k]
            dist2[i, q] = (q - x) * (q - x) + fi[x]
            feat_col[i, q] = x

    feat_row = np.where(feat_col >= 0, vert_row[np.arange(h)[:, None], np.clip(feat_col, 0, w - 1)], -1)
    return np.sqrt(dist2), feat_row, feat_col


def distance_transform(mask: np.ndarray | BinaryMap) -> np.ndarray:
    """Exact Euclidean distance (pixels) to the nearest true pixel.

    +inf everywhere when the mask is empty.
    """
    data = mask.data if isinstance(mask, BinaryMap) else mask
    dist, _, _ = distance_and_feature(data)
    return dist


# ---------------------------------------------------------------------------
# Thinning
# ---------------------------------------------------------------------------


def _neighbour_views(padded: np.ndarray):
    """The eight neighbours of every pixel, clockwise from north."""
    return (
        padded[:-2, 1:-1],  # N
        padded[:-2, 2:],    # NE
        padded[1:-1, 2:],   # E
        padded[2:, 2:],     # SE
        padded[2:, 1:-1],   # S
        padded[2:, :-2],    # SW
        padded[1:-1, :-2],  # W
        padded[:-2, :-2],   # NW
    )


def thin(mask: np.ndarray | BinaryMap) -> np.ndarray:
    """Zhang-Suen two-subiteration thinning to a one-pixel-wide skeleton.

    The result is a subset of the input and a fixed point of the operator
    (thinning an already-thin mask changes nothing).  Pixels outside the
    raster count as background.
    """
    data = mask.data if isinstance(mask, BinaryMap) else np.asarray(mask, dtype=bool)
    if data.ndim != 2 or data.size == 0:
        raise ParamError("thinning needs a non-empty 2-D mask")
    skel = data.copy()
    while True:
        changed = False
        for step in (0, 1):
            padded = np.pad(skel, 1)
            n = _neighbour_views(padded)
            count = np.zeros(skel.shape, dtype=np.int8)
            for nb in n:
                count += nb
            ring = n + (n[0],)
            transitions = np.zeros(skel.shape, dtype=np.int8)
            for a, b in zip(ring[:-1], ring[1:]):
                transitions += (~a) & b
            p2, _, p4, _, p6, _, p8, _ = n
            if step == 0:
                c3 = ~(p2 & p4 & p6)
                c4 = ~(p4 & p6 & p8)
            else:
                c3 = ~(p2 & p4 & p8)
                c4 = ~(p2 & p6 & p8)
            remove = skel & (count >= 2) & (count <= 6) & (transitions == 1) & c3 & c4
            if remove.any():
                skel &= ~remove
                changed = True
        if not changed:
            return skel
