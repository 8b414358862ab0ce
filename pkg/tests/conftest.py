import numpy as np
import pytest
from skimage import data

# Bundled photographic content; gray sources are stacked to RGB.
_SOURCES = (
    ("astronaut", data.astronaut),
    ("coffee", data.coffee),
    ("chelsea", data.chelsea),
    ("camera", data.camera),
    ("moon", data.moon),
    ("brick", data.brick),
    ("grass", data.grass),
    ("gravel", data.gravel),
    ("rocket", data.rocket),
    ("cat", data.cat),
)


def _center_crop(arr: np.ndarray, size: int) -> np.ndarray:
    h, w = arr.shape[:2]
    r0, c0 = (h - size) // 2, (w - size) // 2
    out = arr[r0 : r0 + size, c0 : c0 + size]
    if out.ndim == 2:
        out = np.repeat(out[:, :, None], 3, axis=2)
    return out.astype(np.float64) / 255.0


def natural_images(size: int, count: int) -> dict[str, np.ndarray]:
    refs = {}
    for name, loader in _SOURCES[:count]:
        refs[name] = _center_crop(loader(), size)
    return refs


@pytest.fixture(scope="session")
def refs128() -> dict[str, np.ndarray]:
    return natural_images(128, 5)


@pytest.fixture(scope="session")
def refs256() -> dict[str, np.ndarray]:
    return natural_images(256, 10)
