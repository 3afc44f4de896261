"""Manifests, label derivation, volumes, synthetic generators and unit extraction."""

from volclf.data.records import (
    DatasetManifest,
    DerivedLabel,
    SessionRecord,
    derive_labels,
    select_sessions,
    sessions_for_task,
)
from volclf.data.synthetic import generate_fingerprint, generate_inseparable, generate_separable
from volclf.data.units import extract_patches, extract_roi, extract_slices, hemisphere_centroid
from volclf.data.volume import Volume, minmax_rescale, read_volume, write_volume

__all__ = [
    "DatasetManifest",
    "DerivedLabel",
    "SessionRecord",
    "Volume",
    "derive_labels",
    "extract_patches",
    "extract_roi",
    "extract_slices",
    "generate_fingerprint",
    "generate_inseparable",
    "generate_separable",
    "hemisphere_centroid",
    "minmax_rescale",
    "read_volume",
    "select_sessions",
    "sessions_for_task",
    "write_volume",
]
