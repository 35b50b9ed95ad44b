"""Flat ``key = value`` run configuration with dotted keys.

Every key has a typed default below; unknown keys and unparsable values
raise ConfigError. ``--set key=value`` overrides use the same grammar.
"""

from dataclasses import dataclass, field
from pathlib import Path

from galileo.data.catalog import MODALITIES
from galileo.errors import ConfigError

OBJECTIVES = ("combined", "global-only", "local-only")
LOSS_NAMES = ("PatchDisc", "AllDisc", "MSE")
CONTEXTS = ("all", "disjoint-groups", "decoder+encoder")
# the (cells per side, timesteps) combinations of the full-size recipe
FULL_SHAPE_MENU = ((4, 12), (5, 6), (6, 4), (7, 3), (9, 3), (12, 3))


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


def _strs(text):
    return tuple(v for v in text.replace(",", " ").split())


def _menu(text):
    out = []
    for item in _strs(text):
        s, t = item.lower().split("x")
        out.append((int(s), int(t)))
    if not out:
        raise ValueError("empty shape menu")
    return tuple(out)


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ", ".join(f"{a}x{b}" for a, b in value)
        return ", ".join(str(v) for v in value)
    return str(value)


# key -> (default, parser)
SCHEMA = {
    "model.size": ("nano-mini", str),
    "model.depth": (-1, int),
    "model.dim": (-1, int),
    "model.heads": (-1, int),
    "model.predictor_depth": (2, int),
    "model.final_norm": (True, _bool),
    "model.target_norm": (False, _bool),
    "data.dir": ("", str),
    "data.workers": (1, int),
    "data.normalize": (True, _bool),
    "train.objective": ("combined", str),
    "train.global_loss": ("PatchDisc", str),
    "train.local_loss": ("PatchDisc", str),
    "train.global_masking": ("space+time", str),
    "train.local_masking": ("random", str),
    "train.global_exit_depth": ("varied", str),
    "train.local_exit_depth": ("0", str),
    "train.share_predictors": (False, _bool),
    "train.target_context": ("all", str),
    "train.tau": (0.1, float),
    "train.mask_ratio": (0.5, float),
    "train.steps": (2000, int),
    "train.epochs": (0.0, float),
    "train.minibatch": (32, int),
    "train.repeats": (2, int),
    "train.peak_lr": (2e-3, float),
    "train.weight_decay": (0.02, float),
    "train.warmup_fraction": (0.05, float),
    "train.warmup_epochs": (-1.0, float),
    "train.ema_m0": (0.996, float),
    "train.grad_clip": (1.0, float),
    "train.dropped_modalities": ((), _strs),
    "train.patch_sizes": ((1, 2, 3, 4, 5, 6, 7, 8), _ints),
    "train.shape_menu": (FULL_SHAPE_MENU, _menu),
    "train.seed": (0, int),
    "train.dtype": ("float32", str),
    "train.checkpoint_every": (0, int),
    "train.log_every": (1, int),
    "out.dir": ("runs/default", str),
}


@dataclass
class Config:
    values: dict = field(default_factory=lambda: {k: v[0] for k, v in SCHEMA.items()})
    explicit: set = field(default_factory=set)  # keys given in a file or override

    def __getitem__(self, key):
        return self.values[key]

    def set(self, key, text):
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        parser = SCHEMA[key][1]
        try:
            self.values[key] = parser(text.strip())
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
        self.explicit.add(key)

    def to_text(self):
        return "".join(f"{k} = {_fmt(self.values[k])}\n" for k in SCHEMA)

    def validate(self):
        v = self.values
        checks = [
            (v["train.objective"] in OBJECTIVES, f"train.objective must be one of {OBJECTIVES}"),
            (v["train.global_loss"] in LOSS_NAMES, f"train.global_loss must be one of {LOSS_NAMES}"),
            (v["train.local_loss"] in LOSS_NAMES, f"train.local_loss must be one of {LOSS_NAMES}"),
            (v["train.target_context"] in CONTEXTS, f"train.target_context must be one of {CONTEXTS}"),
            (v["train.tau"] > 0, "train.tau must be > 0"),
            (0 < v["train.mask_ratio"] < 1, "train.mask_ratio must lie in (0, 1)"),
            (v["train.steps"] >= 0, "train.steps must be >= 0"),
            (v["train.minibatch"] >= 1, "train.minibatch must be >= 1"),
            (v["train.repeats"] >= 1, "train.repeats must be >= 1"),
            (0 <= v["train.warmup_fraction"] < 1, "train.warmup_fraction must lie in [0, 1)"),
            (0 <= v["train.ema_m0"] <= 1, "train.ema_m0 must lie in [0, 1]"),
            (v["train.grad_clip"] > 0, "train.grad_clip must be > 0"),
            (v["train.dtype"] in ("float32", "float64"), "train.dtype must be float32 or float64"),
            (all(1 <= p <= 8 for p in v["train.patch_sizes"]) and v["train.patch_sizes"],
             "train.patch_sizes must be values in 1..8"),
            (set(v["train.dropped_modalities"]) <= set(MODALITIES),
             f"train.dropped_modalities must be drawn from {MODALITIES}"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        for key in ("train.global_masking", "train.local_masking"):
            parts = v[key].split("+")
            if not all(p in ("space", "time", "random") for p in parts):
                raise ConfigError(f"{key}: unknown masking strategy {v[key]!r}")
        return self


def parse_config_text(text, source="<config>"):
    cfg = Config()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        try:
            cfg.set(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return cfg


def load_config(path, overrides=()):
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {p}: {exc.strerror or exc}") from None
    cfg = parse_config_text(text, str(p))
    apply_overrides(cfg, overrides)
    return cfg.validate()


def apply_overrides(cfg, overrides):
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        cfg.set(key, value)
    return cfg
