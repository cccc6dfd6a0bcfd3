"""Image planes, modality bundles and 8-bit PGM/PPM files."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SEG_CLASSES = 8
BUNDLE_FILES = {
    "rgb": "rgb.ppm",
    "saliency": "saliency.pgm",
    "depth": "depth.pgm",
    "segmentation": "segmentation.pgm",
}
GT_FILE = "gt.ppm"


class ParseError(ValueError):
    pass


class BundleError(ValueError):
    pass


@dataclass(frozen=True)
class ImagePlane:
    """A raster of intensities in [0, 1], stored as ``(height, width, channels)``."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"ImagePlane needs (H, W, 1|3) data, got {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min(initial=0.0) < 0.0 or arr.max(initial=0.0) > 1.0:
            raise ValueError("ImagePlane values must be finite and inside [0, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def size(self) -> tuple[int, int]:
        return self.width, self.height

    def luma(self) -> np.ndarray:
        """BT.601 luma as an ``(H, W)`` array in [0, 1]."""
        if self.channels == 1:
            return self.data[:, :, 0]
        return self.data @ np.array([0.299, 0.587, 0.114])

    def crop(self, x: int, y: int, w: int, h: int) -> "ImagePlane":
        return ImagePlane(self.data[y:y + h, x:x + w])


@dataclass
class ModalityBundle:
    """Aligned RGB, saliency, depth and segmentation planes for one scene."""

    rgb: ImagePlane
    saliency: ImagePlane
    depth: ImagePlane
    segmentation: ImagePlane
    ground_truth: ImagePlane | None = None
    labels: np.ndarray | None = None
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.rgb.channels != 3:
            raise BundleError("rgb plane must have 3 channels")
        for key in ("saliency", "depth", "segmentation"):
            plane = getattr(self, key)
            if plane.channels != 1:
                raise BundleError(f"{key} plane must have 1 channel")
        for key, plane in self.planes().items():
            if plane.size != self.rgb.size:
                raise BundleError(
                    f"dimension mismatch: {key} is {plane.width}x{plane.height}, "
                    f"rgb is {self.rgb.width}x{self.rgb.height}")
        if self.labels is None:
            self.labels = np.rint(self.segmentation.data[:, :, 0] * (SEG_CLASSES - 1)).astype(np.int64)
        if np.unique(self.labels).size > 32:
            raise BundleError("segmentation uses more than 32 labels")

    @property
    def width(self) -> int:
        return self.rgb.width

    @property
    def height(self) -> int:
        return self.rgb.height

    def planes(self) -> dict[str, ImagePlane]:
        out = {"rgb": self.rgb, "saliency": self.saliency, "depth": self.depth,
               "segmentation": self.segmentation}
        if self.ground_truth is not None:
            out["gt"] = self.ground_truth
        return out

    def crop(self, x: int, y: int, w: int, h: int) -> "ModalityBundle":
        gt = self.ground_truth.crop(x, y, w, h) if self.ground_truth is not None else None
        return ModalityBundle(
            self.rgb.crop(x, y, w, h), self.saliency.crop(x, y, w, h), self.depth.crop(x, y, w, h),
            self.segmentation.crop(x, y, w, h), gt, self.labels[y:y + h, x:x + w],
            name=f"{self.name}@{x},{y}")


@dataclass(frozen=True)
class JndMap:
    """Per-pixel visibility thresholds (>= 0) on the [0, 1] intensity scale."""

    thresholds: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.thresholds, dtype=np.float64)
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        if arr.ndim != 2:
            raise ValueError(f"JndMap needs an (H, W) array, got {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min(initial=0.0) < 0.0:
            raise ValueError("JndMap thresholds must be finite and nonnegative")
        object.__setattr__(self, "thresholds", arr)

    @property
    def height(self) -> int:
        return self.thresholds.shape[0]

    @property
    def width(self) -> int:
        return self.thresholds.shape[1]

    def visualize(self) -> ImagePlane:
        """Brighter means more tolerated change; scaled by the map maximum."""
        peak = self.thresholds.max()
        return ImagePlane(self.thresholds / peak if peak > 0 else self.thresholds)


def segmentation_plane(labels: np.ndarray, num_classes: int = SEG_CLASSES) -> ImagePlane:
    return ImagePlane(np.asarray(labels, dtype=np.float64) / (num_classes - 1))


# --- PGM / PPM -------------------------------------------------------------

def _read_token(raw: bytes, pos: int) -> tuple[bytes, int]:
    n = len(raw)
    while pos < n:
        if raw[pos:pos + 1] == b"#":
            while pos < n and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif raw[pos:pos + 1].isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not raw[pos:pos + 1].isspace() and raw[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ParseError(f"unexpected end of header at byte {start}")
    return raw[start:pos], pos


def decode_pnm(raw: bytes, source: str = "<bytes>") -> ImagePlane:
    if raw[:2] not in (b"P5", b"P6"):
        raise ParseError(f"{source}: expected P5 or P6 magic at byte 0, got {raw[:2]!r}")
    channels = 1 if raw[:2] == b"P5" else 3
    pos = 2
    values = []
    for what in ("width", "height", "maxval"):
        offset = pos
        tok, pos = _read_token(raw, pos)
        try:
            values.append(int(tok))
        except ValueError:
            raise ParseError(f"{source}: bad {what} {tok!r} at byte {offset}") from None
    width, height, maxval = values
    if maxval != 255:
        raise ParseError(f"{source}: only 8-bit files (maxval 255) are supported, got {maxval}")
    if width <= 0 or height <= 0:
        raise ParseError(f"{source}: non-positive size {width}x{height}")
    if pos >= len(raw) or not raw[pos:pos + 1].isspace():
        raise ParseError(f"{source}: missing whitespace after header at byte {pos}")
    pos += 1
    need = width * height * channels
    payload = raw[pos:pos + need]
    if len(payload) < need:
        raise ParseError(f"{source}: truncated payload at byte {pos + len(payload)}, "
                         f"expected {need} bytes from byte {pos}")
    pix = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return ImagePlane(pix / 255.0)


def encode_pnm(plane: ImagePlane) -> bytes:
    pix = np.floor(plane.data * 255.0 + 0.5).astype(np.uint8)
    magic = b"P5" if plane.channels == 1 else b"P6"
    return magic + f"\n{plane.width} {plane.height}\n255\n".encode() + pix.tobytes()


def load_image(path) -> ImagePlane:
    path = Path(path)
    return decode_pnm(path.read_bytes(), str(path))


def save_image(plane: ImagePlane, path) -> None:
    Path(path).write_bytes(encode_pnm(plane))


def load_bundle(directory) -> ModalityBundle:
    directory = Path(directory)
    planes = {}
    for key, fname in BUNDLE_FILES.items():
        fpath = directory / fname
        if not fpath.exists():
            raise BundleError(f"missing modality: {key} ({fpath})")
        planes[key] = load_image(fpath)
    gt_path = directory / GT_FILE
    gt = load_image(gt_path) if gt_path.exists() else None
    return ModalityBundle(**planes, ground_truth=gt, name=directory.name)


def save_bundle(bundle: ModalityBundle, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for key, fname in BUNDLE_FILES.items():
        save_image(getattr(bundle, key), directory / fname)
    if bundle.ground_truth is not None:
        save_image(bundle.ground_truth, directory / GT_FILE)
    return directory
