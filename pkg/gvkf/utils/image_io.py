"""PPM, PFM and PNG codecs for ImageBuffer."""

import re
from pathlib import Path
from typing import Tuple, Union

import numpy as np
import structlog
from skimage import img_as_float, io as skio

from gvkf.core.exceptions import ImageFileError, ShapeError
from gvkf.models.geometry import ImageBuffer

logger = structlog.get_logger(__name__)

PathLike = Union[str, Path]

_HEADER_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_bytes(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise ImageFileError(f"cannot read {path}: {e.strerror or e}") from e


def _write_bytes(path: PathLike, payload: bytes) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(payload)
    except OSError as e:
        raise ImageFileError(f"cannot write {path}: {e.strerror or e}") from e


def _header(data: bytes, count: int, path: PathLike) -> Tuple[list, int]:
    """First ``count`` whitespace-separated header tokens and the offset after them."""
    tokens = []
    pos = 0
    for _ in range(count):
        match = _HEADER_TOKEN.match(data, pos)
        if match is None:
            raise ImageFileError(f"{path}: truncated image header")
        tokens.append(match.group(1).decode("ascii", errors="replace"))
        pos = match.end()
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


# ============================================================================
# PPM (P6, maxval 255)
# ============================================================================


def write_ppm(image: ImageBuffer, path: PathLike) -> None:
    pixels = image.to_rgb8()
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    _write_bytes(path, header + pixels.tobytes())


def read_ppm(path: PathLike) -> ImageBuffer:
    data = _read_bytes(path)
    tokens, offset = _header(data, 4, path)
    magic, width, height, maxval = tokens
    if magic != "P6":
        raise ImageFileError(f"{path}: not a binary PPM (magic {magic!r})")
    try:
        width, height, maxval = int(width), int(height), int(maxval)
    except ValueError as e:
        raise ImageFileError(f"{path}: malformed PPM header") from e
    if maxval != 255:
        raise ImageFileError(f"{path}: only maxval 255 is supported, got {maxval}")
    if len(data) - offset < width * height * 3:
        raise ImageFileError(f"{path}: truncated PPM raster")
    raster = np.frombuffer(data, dtype=np.uint8, count=width * height * 3, offset=offset)
    return ImageBuffer.rgb(raster.reshape(height, width, 3) / 255.0)


# ============================================================================
# PFM (little-endian, rows stored bottom to top)
# ============================================================================


def write_pfm(image: ImageBuffer, path: PathLike) -> None:
    magic = "Pf" if image.channels == "gray32f" else "PF"
    header = f"{magic}\n{image.width} {image.height}\n-1.0\n".encode("ascii")
    raster = np.ascontiguousarray(image.data[::-1].astype("<f4"))
    if image.channels == "gray32f":
        raster = raster[:, :, 0]
    _write_bytes(path, header + raster.tobytes())


def read_pfm(path: PathLike) -> ImageBuffer:
    data = _read_bytes(path)
    tokens, offset = _header(data, 4, path)
    magic, width, height, scale = tokens
    if magic not in ("Pf", "PF"):
        raise ImageFileError(f"{path}: not a PFM file (magic {magic!r})")
    try:
        width, height, scale = int(width), int(height), float(scale)
    except ValueError as e:
        raise ImageFileError(f"{path}: malformed PFM header") from e
    channels = 1 if magic == "Pf" else 3
    dtype = "<f4" if scale < 0 else ">f4"
    count = width * height * channels
    if len(data) - offset < 4 * count:
        raise ImageFileError(f"{path}: truncated PFM raster")
    raster = np.frombuffer(data, dtype=dtype, count=count, offset=offset).astype(np.float64)
    raster = raster.reshape(height, width, channels)[::-1]
    if channels == 1:
        return ImageBuffer.gray(raster[:, :, 0])
    return ImageBuffer(width=width, height=height, channels="rgb8", data=raster)


# ============================================================================
# PNG (scikit-image)
# ============================================================================


def write_png(image: ImageBuffer, path: PathLike) -> None:
    if image.channels != "rgb8":
        raise ShapeError("PNG export needs an rgb8 image")
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        skio.imsave(str(path), image.to_rgb8(), check_contrast=False)
    except (OSError, ValueError) as e:
        raise ImageFileError(f"cannot write {path}: {e}") from e


def read_png(path: PathLike) -> ImageBuffer:
    try:
        pixels = skio.imread(str(path))
    except (OSError, ValueError) as e:
        raise ImageFileError(f"cannot read {path}: {e}") from e
    pixels = img_as_float(pixels)
    if pixels.ndim == 2:
        pixels = np.repeat(pixels[:, :, None], 3, axis=2)
    return ImageBuffer.rgb(pixels[:, :, :3])


# ============================================================================
# Dispatch by extension
# ============================================================================

READERS = {".ppm": read_ppm, ".pfm": read_pfm, ".png": read_png}
WRITERS = {".ppm": write_ppm, ".pfm": write_pfm, ".png": write_png}


def read_image(path: PathLike) -> ImageBuffer:
    reader = READERS.get(Path(path).suffix.lower())
    if reader is None:
        raise ImageFileError(f"unsupported image format: {path}")
    return reader(path)


def write_image(image: ImageBuffer, path: PathLike) -> None:
    writer = WRITERS.get(Path(path).suffix.lower())
    if writer is None:
        raise ImageFileError(f"unsupported image format: {path}")
    writer(image, path)
    logger.debug("Wrote image", path=str(path), width=image.width, height=image.height)
