"""The multimodal Sample and the per-sample transforms used in training."""

from dataclasses import dataclass, replace

import numpy as np

from galileo.data.catalog import KINDS, block_channels
from galileo.errors import ConfigError, ContractError


@dataclass(frozen=True, eq=False)
class Sample:
    """One training instance.

    spacetime: [H, W, T, C_st]; space: [H, W, C_s]; time: [T, C_t];
    static: [C_q]; months: [T] ints in 0..11, consecutive modulo 12.
    """

    spacetime: np.ndarray
    space: np.ndarray
    time: np.ndarray
    static: np.ndarray
    months: np.ndarray
    label: int | None = None

    def __post_init__(self):
        H, W, T = self.dims
        if H < 1 or W < 1 or T < 1:
            raise ContractError(f"invalid sample dims {(H, W, T)}")
        counts = {k: len(v) for k, v in block_channels().items()}
        if self.spacetime.shape != (H, W, T, counts["space-time"]):
            raise ContractError(f"space-time block has shape {self.spacetime.shape}")
        if self.space.shape != (H, W, counts["space"]):
            raise ContractError(f"space block has shape {self.space.shape}")
        if self.time.shape != (T, counts["time"]):
            raise ContractError(f"time block has shape {self.time.shape}")
        if self.static.shape != (counts["static"],):
            raise ContractError(f"static block has shape {self.static.shape}")
        m = np.asarray(self.months)
        if m.shape != (T,) or m.min() < 0 or m.max() > 11:
            raise ContractError("months must be T values in 0..11")
        if T > 1 and np.any((np.diff(m) % 12) != 1):
            raise ContractError("months must be consecutive modulo 12")

    @property
    def dims(self):
        H, W, T = self.spacetime.shape[:3]
        return H, W, T

    def blocks(self):
        return {"space-time": self.spacetime, "space": self.space,
                "time": self.time, "static": self.static}

    def equals(self, other):
        """Bit-exact equality of all arrays, months and label."""
        return (self.label == other.label
                and np.array_equal(self.months, other.months)
                and all(a.dtype == b.dtype and a.shape == b.shape
                        and a.tobytes() == b.tobytes()
                        for a, b in zip(self.blocks().values(), other.blocks().values())))


@dataclass(frozen=True)
class NormStats:
    """Per-channel mean/std keyed by channel name."""

    mean: dict
    std: dict

    def __post_init__(self):
        for name, s in self.std.items():
            if not s > 0:
                raise ConfigError(f"std for channel {name!r} must be > 0, got {s}")

    def vectors(self, kind):
        names = block_channels()[kind]
        missing = [n for n in names if n not in self.mean or n not in self.std]
        if missing:
            raise ConfigError(f"normalization stats missing channels {missing}")
        return (np.array([self.mean[n] for n in names]),
                np.array([self.std[n] for n in names]))

    @classmethod
    def identity(cls):
        names = [n for k in KINDS for n in block_channels()[k]]
        return cls(dict.fromkeys(names, 0.0), dict.fromkeys(names, 1.0))


def compute_stats(samples, min_std=1e-6):
    """Corpus statistics over every pixel/timestep of every sample."""
    mean, std = {}, {}
    for kind in KINDS:
        names = block_channels()[kind]
        rows = np.concatenate([
            s.blocks()[kind].reshape(-1, len(names)).astype(np.float64) for s in samples])
        mu = rows.mean(axis=0)
        sd = rows.std(axis=0)
        for i, n in enumerate(names):
            mean[n] = float(mu[i])
            std[n] = float(max(sd[i], min_std))
    return NormStats(mean, std)


def normalize(s, stats):
    """Standardise every channel: (x - mean) / std."""
    out = {}
    for kind, arr in s.blocks().items():
        mu, sd = stats.vectors(kind)
        out[kind] = ((arr - mu) / sd).astype(arr.dtype)
    return replace(s, spacetime=out["space-time"], space=out["space"],
                   time=out["time"], static=out["static"])


def subsample_shape(s, P, S, T_sub, seed):
    """Random crop to ``P*S`` pixels per side and a contiguous ``T_sub``-month window."""
    H, W, T = s.dims
    side = P * S
    if not 1 <= P <= 8:
        raise ContractError(f"patch size {P} outside 1..8")
    if side > H or side > W or T_sub > T or S < 1 or T_sub < 1:
        raise ContractError(f"window {side}x{side}x{T_sub} does not fit sample {H}x{W}x{T}")
    rng = np.random.default_rng(seed)
    r0 = int(rng.integers(0, H - side + 1))
    c0 = int(rng.integers(0, W - side + 1))
    t0 = int(rng.integers(0, T - T_sub + 1))
    return replace(
        s,
        spacetime=s.spacetime[r0:r0 + side, c0:c0 + side, t0:t0 + T_sub],
        space=s.space[r0:r0 + side, c0:c0 + side],
        time=s.time[t0:t0 + T_sub],
        months=np.asarray(s.months)[t0:t0 + T_sub],
    )


# dihedral group D4: code = rotations + 4 * flip, transform = rot90^r(hflip^f(x))

def _apply_spatial(arr, code):
    r, f = code % 4, code // 4
    if f:
        arr = arr[:, ::-1]
    if r:
        arr = np.rot90(arr, r, axes=(0, 1))
    return np.ascontiguousarray(arr)


def augment(s, code):
    """One of the 8 flips/rotations of both spatial blocks; time and static untouched."""
    if not 0 <= code <= 7:
        raise ContractError(f"augmentation code {code} outside 0..7")
    H, W, _ = s.dims
    if code % 4 and H != W:
        raise ContractError("rotations need a square sample")
    if code == 0:
        return s
    return replace(s, spacetime=_apply_spatial(s.spacetime, code),
                   space=_apply_spatial(s.space, code))


def inverse_code(code):
    r, f = code % 4, code // 4
    return code if f else (4 - r) % 4


def compose_codes(a, b):
    """Code of ``augment(augment(x, b), a)``."""
    ra, fa = a % 4, a // 4
    rb, fb = b % 4, b // 4
    # F R^r = R^-r F
    if fa:
        return ((ra - rb) % 4) + 4 * (1 - fb)
    return ((ra + rb) % 4) + 4 * fb
