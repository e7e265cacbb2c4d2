import logging
from pathlib import Path

import numpy as np

try:
    from PIL import Image  # type: ignore
except ImportError as exc:  # pragma: no cover - Pillow is a hard requirement
    Image = None  # type: ignore[assignment]
    PILLOW_IMPORT_ERROR: ImportError | None = exc
else:
    PILLOW_IMPORT_ERROR = None

_LOGGER = logging.getLogger("sketch-retrieval.data")


def _require_pillow() -> None:
    if Image is None:
        raise RuntimeError(
            "Pillow is not available; install the dependencies referenced in requirements.txt."
        ) from PILLOW_IMPORT_ERROR


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(path: Path, pixels: np.ndarray) -> Path:
    """
    Write pixels in [0, 1] as a binary portable pixmap: (h, w) or single-channel
    arrays become P5 graymaps, (h, w, 3) arrays P6 pixmaps.
    """

    _require_pillow()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    array = to_uint8(pixels)
    if array.ndim == 3 and array.shape[2] == 1:
        array = array[:, :, 0]
    mode = "L" if array.ndim == 2 else "RGB"
    Image.fromarray(array, mode=mode).save(path, format="PPM")
    return path


def read_image(path: Path, channels: int = 3) -> np.ndarray:
    """Read a P5/P6 file into an (h, w, channels) float array in [0, 1]; gray is replicated."""

    _require_pillow()
    path = Path(path)
    try:
        with Image.open(path) as handle:
            converted = handle.convert("RGB" if channels == 3 else "L")
            array = np.asarray(converted, dtype=np.float64) / 255.0
    except FileNotFoundError as exc:
        raise RuntimeError(f"Image '{path}' is missing; regenerate the corpus with gen-data.") from exc
    if array.ndim == 2:
        array = array[:, :, None]
    return array


def upscale_grid(grid: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbour enlargement of a patch-lattice map for rendering."""

    return np.kron(grid, np.ones((factor, factor)))


__all__ = ["read_image", "to_uint8", "upscale_grid", "write_image"]
