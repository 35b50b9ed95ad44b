"""The 17 channel groups and their layout inside a Sample's four blocks."""

from dataclasses import dataclass
from functools import lru_cache

SPACE_TIME = "space-time"
SPACE = "space"
TIME = "time"
STATIC = "static"
KINDS = (SPACE_TIME, SPACE, TIME, STATIC)

PROJECTION_ONLY = "projection-only"
HALF_DEPTH = "half-depth"
FULL_DEPTH = "full-depth"


@dataclass(frozen=True)
class ChannelGroupSpec:
    name: str
    kind: str
    channels: tuple
    exit_class: str
    modality: str


_DW_CLASSES = ("water", "trees", "grass", "flooded_vegetation", "crops",
               "shrub_and_scrub", "built", "bare", "snow_and_ice")

_CATALOG = (
    ChannelGroupSpec("S1", SPACE_TIME, ("VV", "VH"), FULL_DEPTH, "S1"),
    ChannelGroupSpec("S2-RGB", SPACE_TIME, ("B2", "B3", "B4"), FULL_DEPTH, "S2"),
    ChannelGroupSpec("S2-RedEdge", SPACE_TIME, ("B5", "B6", "B7"), FULL_DEPTH, "S2"),
    ChannelGroupSpec("S2-NIR", SPACE_TIME, ("B8",), FULL_DEPTH, "S2"),
    ChannelGroupSpec("S2-NIR-narrow", SPACE_TIME, ("B8A",), FULL_DEPTH, "S2"),
    ChannelGroupSpec("S2-SWIR", SPACE_TIME, ("B11", "B12"), FULL_DEPTH, "S2"),
    ChannelGroupSpec("NDVI", SPACE_TIME, ("ndvi",), FULL_DEPTH, "NDVI"),
    ChannelGroupSpec("SRTM", SPACE, ("elevation", "slope"), HALF_DEPTH, "SRTM"),
    ChannelGroupSpec("DW-probs", SPACE, tuple("dw_" + c for c in _DW_CLASSES),
                     PROJECTION_ONLY, "DynamicWorld"),
    ChannelGroupSpec("WC-maps", SPACE, ("wc_temporarycrops", "wc_maize"),
                     PROJECTION_ONLY, "WorldCereal"),
    ChannelGroupSpec("ERA5", TIME, ("precipitation", "temperature"), HALF_DEPTH, "ERA5"),
    ChannelGroupSpec("TerraClimate", TIME, ("water_deficit", "soil_moisture",
                                            "evapotranspiration"), HALF_DEPTH, "TerraClim"),
    ChannelGroupSpec("VIIRS", TIME, ("nightlights",), HALF_DEPTH, "VIIRS"),
    ChannelGroupSpec("LandScan", STATIC, ("population",), HALF_DEPTH, "LandScan"),
    ChannelGroupSpec("Location", STATIC, ("sin_lat", "cos_lat", "sin_lon", "cos_lon"),
                     HALF_DEPTH, "Location"),
    ChannelGroupSpec("DW-static", STATIC, tuple("dw_mean_" + c for c in _DW_CLASSES),
                     PROJECTION_ONLY, "DynamicWorld"),
    ChannelGroupSpec("WC-static", STATIC, ("wc_mean_temporarycrops", "wc_mean_maize"),
                     PROJECTION_ONLY, "WorldCereal"),
)

# names accepted by ``train.dropped_modalities`` (the data products of the modality-drop ablation)
MODALITIES = ("S1", "S2", "NDVI", "ERA5", "TerraClim", "VIIRS", "SRTM",
              "DynamicWorld", "WorldCereal", "LandScan", "Location")


def canonical_channel_groups():
    return list(_CATALOG)


@lru_cache(maxsize=None)
def block_layout():
    """Per-group (kind, channel offset, channel count) inside the Sample blocks."""
    offsets = dict.fromkeys(KINDS, 0)
    layout = {}
    for g in _CATALOG:
        layout[g.name] = (g.kind, offsets[g.kind], len(g.channels))
        offsets[g.kind] += len(g.channels)
    return layout


@lru_cache(maxsize=None)
def block_channels():
    """Channel names per block kind, in storage order."""
    out = {k: [] for k in KINDS}
    for g in _CATALOG:
        out[g.kind].extend(g.channels)
    return {k: tuple(v) for k, v in out.items()}


def group_index(name):
    for i, g in enumerate(_CATALOG):
        if g.name == name:
            return i
    raise KeyError(name)


def groups_without(modalities):
    """Catalog indices of the groups that survive dropping ``modalities``."""
    unknown = set(modalities) - set(MODALITIES)
    if unknown:
        raise KeyError(f"unknown modalities: {sorted(unknown)}")
    return [i for i, g in enumerate(_CATALOG) if g.modality not in modalities]
