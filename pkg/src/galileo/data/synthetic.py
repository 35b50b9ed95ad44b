"""Class-structured synthetic multimodal samples.

Each class owns a fixed prototype (spectral signature of its blobs, blob
radius, seasonal phase, static levels). A sample draws a random layout
(blob centres, start month, location jitter) and renders every modality
from a shared blob map, so the groups are correlated with each other and
with the label. Additive Gaussian noise is scaled by ``noise``.
"""

from dataclasses import dataclass

import numpy as np

from galileo.data.catalog import block_channels
from galileo.data.sample import Sample
from galileo.errors import ContractError

N_BLOBS = 8
# per-pixel noise std; pixel targets must stay predictable from neighbouring tokens
NOISE = 0.1
# class-independent smooth field shared by every pixel channel
BG_GAIN = 0.8
DEFAULT_DIMS = (16, 16, 12)
_WORLD_SEED = 0x6A1E0


@dataclass(frozen=True)
class Layout:
    centers: np.ndarray  # [N_BLOBS, 2], fractional (row, col) in [0, 1)
    start_month: int
    lat_jitter: float
    lon_jitter: float
    background: np.ndarray  # [4] phases of the smooth background field


@dataclass(frozen=True)
class Prototype:
    s2: np.ndarray  # [10] blob reflectance offsets
    s1: np.ndarray  # [2]
    radius: float  # blob radius as a fraction of the side
    phase: float
    elevation: float
    dw_logits: np.ndarray  # [9]
    wc_logits: np.ndarray  # [2]
    climate: np.ndarray  # [3] terraclimate levels
    nightlights: float
    population: float
    lat: float
    lon: float


def class_prototype(class_id, n_classes):
    rng = np.random.default_rng([_WORLD_SEED, n_classes, class_id])
    return Prototype(
        s2=rng.normal(0.0, 1.0, 10),
        s1=rng.normal(0.0, 1.0, 2),
        radius=0.05 + 0.02 * (class_id % 3),
        phase=2 * np.pi * class_id / n_classes,
        elevation=rng.normal(0.0, 1.0),
        dw_logits=rng.normal(0.0, 1.0, 9),
        wc_logits=rng.normal(0.0, 1.0, 2),
        climate=rng.normal(0.0, 0.5, 3),
        nightlights=rng.normal(0.0, 0.5),
        population=rng.normal(0.0, 0.5),
        lat=rng.uniform(-60, 60),
        lon=rng.uniform(-180, 180),
    )


def draw_layout(rng):
    return Layout(
        centers=rng.uniform(0.0, 1.0, size=(N_BLOBS, 2)),
        start_month=int(rng.integers(0, 12)),
        lat_jitter=float(rng.normal(0.0, 2.0)),
        lon_jitter=float(rng.normal(0.0, 2.0)),
        background=rng.uniform(0.0, 2 * np.pi, size=4),
    )


def _blob_map(layout, radius, H, W):
    yy = (np.arange(H) + 0.5) / H
    xx = (np.arange(W) + 0.5) / W
    out = np.zeros((H, W))
    for cy, cx in layout.centers:
        d2 = (yy[:, None] - cy) ** 2 + (xx[None, :] - cx) ** 2
        out = np.maximum(out, np.exp(-d2 / (2 * radius ** 2)))
    return out


def _background(layout, H, W):
    yy = np.arange(H)[:, None] / max(H, 1)
    xx = np.arange(W)[None, :] / max(W, 1)
    a, b, c, d = layout.background
    return 0.5 * np.sin(2 * np.pi * yy + a) * np.cos(2 * np.pi * xx + b) + 0.3 * np.sin(
        4 * np.pi * (yy + xx) + c) * np.cos(d)


def _softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def generate_synthetic_sample(seed, class_id, dims=DEFAULT_DIMS, n_classes=4,
                              noise=NOISE, layout=None):
    """Deterministic in (seed, class_id, dims, n_classes, noise, layout)."""
    H, W, T = (int(v) for v in dims)
    if H < 1 or W < 1 or T < 1:
        raise ContractError(f"invalid dims {dims}")
    if not 0 <= class_id < n_classes:
        raise ContractError(f"class {class_id} outside 0..{n_classes - 1}")
    rng = np.random.default_rng([int(seed), int(class_id), H, W, T])
    drawn = draw_layout(rng)
    layout = drawn if layout is None else layout
    proto = class_prototype(class_id, n_classes)
    eps = lambda *shape: noise * rng.normal(size=shape)  # noqa: E731

    blob = _blob_map(layout, proto.radius, H, W)
    # centred so the class leaves no trace in per-channel sample means
    pattern = blob - blob.mean()
    bg = _background(layout, H, W)
    months = (layout.start_month + np.arange(T)) % 12
    season = np.sin(2 * np.pi * months / 12 + proto.phase)  # [T]

    base_s2 = np.linspace(0.5, 2.0, 10)
    s2 = (base_s2 + BG_GAIN * bg[..., None, None]
          + proto.s2 * pattern[..., None, None] * (1.0 + 0.5 * season[None, None, :, None])
          + eps(H, W, T, 10))
    s1 = (np.array([-1.0, -2.0]) + BG_GAIN * bg[..., None, None]
          + proto.s1 * pattern[..., None, None] * (1.0 + 0.5 * season[None, None, :, None])
          + eps(H, W, T, 2))
    red, nir = s2[..., 2], s2[..., 6]
    ndvi = np.tanh(nir - red)[..., None]
    # storage order follows the catalog: S1, RGB, RedEdge, NIR, NIR-narrow, SWIR, NDVI
    spacetime = np.concatenate([s1, s2, ndvi], axis=-1)

    elevation = proto.elevation * pattern + bg + eps(H, W)
    gy, gx = np.gradient(elevation) if min(H, W) > 1 else (np.zeros((H, W)),) * 2
    slope = np.hypot(gy, gx)
    dw = _softmax(proto.dw_logits * pattern[..., None] + eps(H, W, 9))
    wc = 1.0 / (1.0 + np.exp(-(proto.wc_logits * pattern[..., None] + eps(H, W, 2))))
    space = np.concatenate([elevation[..., None], slope[..., None], dw, wc], axis=-1)

    precip = 1.0 + np.sin(2 * np.pi * months / 12 + proto.phase + 0.5) + eps(T)
    temp = np.cos(2 * np.pi * months / 12 + proto.phase) + eps(T)
    climate = proto.climate[None, :] + 0.5 * season[:, None] + eps(T, 3)
    lights = proto.nightlights + 0.1 * season + eps(T)
    time = np.concatenate([precip[:, None], temp[:, None], climate, lights[:, None]], axis=-1)

    lat = np.deg2rad(proto.lat + layout.lat_jitter)
    lon = np.deg2rad(proto.lon + layout.lon_jitter)
    static = np.concatenate([
        [proto.population + float(eps(1)[0])],
        [np.sin(lat), np.cos(lat), np.sin(lon), np.cos(lon)],
        dw.mean(axis=(0, 1)),
        wc.mean(axis=(0, 1)),
    ])

    counts = {k: len(v) for k, v in block_channels().items()}
    assert spacetime.shape[-1] == counts["space-time"]
    assert space.shape[-1] == counts["space"]
    assert time.shape[-1] == counts["time"] and static.shape[0] == counts["static"]
    f32 = lambda a: np.ascontiguousarray(a, dtype=np.float32)  # noqa: E731
    return Sample(f32(spacetime), f32(space), f32(time), f32(static),
                  months.astype(np.int64), int(class_id))


def generate_corpus(n, n_classes=4, seed=0, dims=DEFAULT_DIMS, noise=NOISE):
    """``n`` samples with balanced labels (``i % n_classes``) and per-index seeds."""
    seeds = np.random.SeedSequence(seed).generate_state(max(n, 1), dtype=np.uint32)
    return [generate_synthetic_sample(int(seeds[i]), i % n_classes, dims, n_classes, noise)
            for i in range(n)]
