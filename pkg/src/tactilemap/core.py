"""Raster value types, sensor geometry and lossless raster I/O."""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

MM_PER_PIXEL = 0.0077

_MAGIC = b"TMRASTER"
_HEADER_SIZE = 64
# magic, kind, dtype code, width, height, channels, mm_per_pixel
_HEADER_FMT = "<8sIIIIId"
_DTYPE_F32 = 1

KIND_HEIGHT = 1
KIND_NORMAL = 2
KIND_RGB = 3


class RasterError(ValueError):
    """Malformed raster input or corrupt raster file."""


def _as_f32(data, ndim, channels=None):
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if arr.ndim != ndim:
        raise RasterError(f"expected {ndim}-d array, got shape {arr.shape}")
    if channels is not None and arr.shape[-1] != channels:
        raise RasterError(f"expected {channels} channels, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise RasterError("raster contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class HeightMap:
    """Surface height in µm, shape (rows, cols), stored as float32."""

    data: np.ndarray
    mm_per_pixel: float = MM_PER_PIXEL

    def __post_init__(self):
        object.__setattr__(self, "data", _as_f32(self.data, 2))
        if not self.mm_per_pixel > 0:
            raise RasterError("mm_per_pixel must be positive")

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    def __eq__(self, other):
        return (
            isinstance(other, HeightMap)
            and self.mm_per_pixel == other.mm_per_pixel
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True, eq=False)
class NormalMap:
    """Unit surface normals (nx, ny, nz), shape (rows, cols, 3).

    x runs along columns and y along rows. ``nz`` must be strictly positive.
    """

    data: np.ndarray
    mm_per_pixel: float = MM_PER_PIXEL

    def __post_init__(self):
        arr = _as_f32(self.data, 3, channels=3)
        norms = np.sqrt(np.sum(arr.astype(np.float64) ** 2, axis=-1))
        if arr.size and np.max(np.abs(norms - 1.0)) > 1e-6:
            raise RasterError("normal vectors must have unit length")
        if arr.size and np.min(arr[..., 2]) <= 0:
            raise RasterError("normal map must have nz > 0 everywhere")
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_vectors(cls, vec, mm_per_pixel=MM_PER_PIXEL):
        """Normalize raw (…, 3) vectors in float64 and wrap them."""
        vec = np.asarray(vec, dtype=np.float64)
        unit = vec / np.linalg.norm(vec, axis=-1, keepdims=True)
        # float32 rounding can push |n| off by ~1e-7; renormalize after cast
        unit32 = unit.astype(np.float32)
        unit32 /= np.linalg.norm(unit32.astype(np.float64), axis=-1, keepdims=True).astype(np.float32)
        return cls(unit32, mm_per_pixel)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    def __eq__(self, other):
        return (
            isinstance(other, NormalMap)
            and self.mm_per_pixel == other.mm_per_pixel
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True, eq=False)
class TactileImage:
    """RGB sensor image with values in [0, 1], shape (rows, cols, 3)."""

    data: np.ndarray
    mm_per_pixel: float = MM_PER_PIXEL

    def __post_init__(self):
        arr = _as_f32(self.data, 3, channels=3)
        if arr.size and (arr.min() < 0 or arr.max() > 1):
            raise RasterError("tactile image values must lie in [0, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    def __eq__(self, other):
        return (
            isinstance(other, TactileImage)
            and self.mm_per_pixel == other.mm_per_pixel
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True)
class SensorGeometry:
    native_width: int = 3264
    native_height: int = 2448
    crop_size: int = 1500
    crop_center: tuple = (1224, 1482)  # (row, col)
    border_crop: int = 100
    mm_per_pixel: float = MM_PER_PIXEL

    def __post_init__(self):
        r, c = self.crop_center
        half = self.crop_size // 2
        if r - half < 0 or c - half < 0:
            raise ValueError("crop window leaves the native frame")
        if r - half + self.crop_size > self.native_height or c - half + self.crop_size > self.native_width:
            raise ValueError("crop window leaves the native frame")
        if not self.border_crop < self.crop_size / 2:
            raise ValueError("border_crop must be < crop_size / 2")
        if not self.mm_per_pixel > 0:
            raise ValueError("mm_per_pixel must be positive")

    @property
    def field_mm(self):
        """Physical side length of the cropped field of view."""
        return self.crop_size * self.mm_per_pixel

    def at_resolution(self, size):
        """Same physical field of view resampled to ``size`` pixels.

        Pixel pitch and border crop scale with the resolution; the native
        frame is scaled too so the crop window stays valid.
        """
        scale = self.crop_size / size
        native_h = int(np.ceil(self.native_height / scale))
        native_w = int(np.ceil(self.native_width / scale))
        center = (int(round(self.crop_center[0] / scale)), int(round(self.crop_center[1] / scale)))
        half = size // 2
        center = (
            min(max(center[0], half), native_h - (size - half)),
            min(max(center[1], half), native_w - (size - half)),
        )
        return SensorGeometry(
            native_width=native_w,
            native_height=native_h,
            crop_size=size,
            crop_center=center,
            border_crop=int(round(self.border_crop / scale)),
            mm_per_pixel=self.mm_per_pixel * scale,
        )


def crop_center(img, geom=SensorGeometry()):
    """Cut the ``crop_size`` square centred on ``geom.crop_center``.

    Output pixel (0, 0) is native pixel (row - crop_size//2, col - crop_size//2).
    """
    data = img.data if isinstance(img, TactileImage) else np.asarray(img)
    if data.shape[:2] != (geom.native_height, geom.native_width):
        raise RasterError(
            f"frame is {data.shape[:2]}, geometry expects "
            f"{(geom.native_height, geom.native_width)}"
        )
    half = geom.crop_size // 2
    r0 = geom.crop_center[0] - half
    c0 = geom.crop_center[1] - half
    out = data[r0:r0 + geom.crop_size, c0:c0 + geom.crop_size]
    if isinstance(img, TactileImage):
        return TactileImage(out, img.mm_per_pixel)
    return out.copy()


def _kind_of(raster):
    if isinstance(raster, HeightMap):
        return KIND_HEIGHT
    if isinstance(raster, NormalMap):
        return KIND_NORMAL
    if isinstance(raster, TactileImage):
        return KIND_RGB
    raise TypeError(f"not a raster type: {type(raster).__name__}")


def raster_bytes(raster):
    kind = _kind_of(raster)
    data = raster.data
    channels = 1 if data.ndim == 2 else data.shape[2]
    header = struct.pack(
        _HEADER_FMT, _MAGIC, kind, _DTYPE_F32, data.shape[1], data.shape[0],
        channels, float(raster.mm_per_pixel),
    )
    header = header.ljust(_HEADER_SIZE, b"\0")
    return header + data.astype("<f4", copy=False).tobytes(order="C")


def save_raster(path, raster):
    Path(path).write_bytes(raster_bytes(raster))


def raster_from_bytes(buf):
    if len(buf) < _HEADER_SIZE:
        raise RasterError("file shorter than raster header")
    magic, kind, dtype, width, height, channels, mmpp = struct.unpack_from(_HEADER_FMT, buf)
    if magic != _MAGIC:
        raise RasterError("bad magic; not a raster file")
    if dtype != _DTYPE_F32:
        raise RasterError(f"unsupported dtype code {dtype}")
    expected = {KIND_HEIGHT: 1, KIND_NORMAL: 3, KIND_RGB: 3}.get(kind)
    if expected is None or channels != expected:
        raise RasterError(f"kind {kind} with {channels} channels is not valid")
    n = width * height * channels
    payload = buf[_HEADER_SIZE:]
    if len(payload) != 4 * n:
        raise RasterError(f"payload has {len(payload)} bytes, header implies {4 * n}")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    if not np.all(np.isfinite(data)):
        raise RasterError("corrupt raster: non-finite values")
    if kind == KIND_HEIGHT:
        return HeightMap(data.reshape(height, width), mmpp)
    data = data.reshape(height, width, 3)
    if kind == KIND_NORMAL:
        return NormalMap(data, mmpp)
    return TactileImage(data, mmpp)


def load_raster(path):
    return raster_from_bytes(Path(path).read_bytes())


def save_png(path, img, bits=8):
    """Write a TactileImage as an 8- or 16-bit RGB PNG (linear mapping)."""
    import cv2

    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    top = 255 if bits == 8 else 65535
    q = np.rint(np.clip(img.data, 0, 1) * top).astype(np.uint8 if bits == 8 else np.uint16)
    if not cv2.imwrite(str(path), q[..., ::-1]):
        raise OSError(f"could not write {path}")


def load_png(path, mm_per_pixel=MM_PER_PIXEL):
    import cv2

    q = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if q is None:
        raise OSError(f"could not read {path}")
    if q.ndim == 2:
        q = np.repeat(q[..., None], 3, axis=2)
    q = q[..., :3][..., ::-1]
    top = np.iinfo(q.dtype).max
    return TactileImage(q.astype(np.float64) / top, mm_per_pixel)


def with_data(raster, data):
    """Copy of ``raster`` carrying new data (same pitch)."""
    return replace(raster, data=data)
