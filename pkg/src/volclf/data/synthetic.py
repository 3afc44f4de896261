"""Synthetic datasets for sanity checks and the leakage demonstration.

All three generators share one smooth base volume per dataset seed and draw
each subject from its own ``SeedSequence([seed, index])`` stream, so a
subject's data do not depend on how many others are generated.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from volclf.data.records import DatasetManifest, SessionRecord
from volclf.data.volume import Volume, write_volume
from volclf.errors import ConfigurationError

CLASS_DIAGNOSIS = ("CN", "AD")  # class 0 is the control, class 1 the disease class
AGE_MEAN, AGE_SD, AGE_MIN, AGE_MAX = 73.0, 7.0, 55.0, 92.0
DEFAULT_DIMS = (32, 32, 32)


def smooth_field(rng: np.random.Generator, dims: Sequence[int], divisor: float = 8.0) -> np.ndarray:
    """Gaussian-filtered white noise (sd = extent/divisor per axis) scaled to [0, 1]."""
    noise = rng.standard_normal(tuple(dims))
    field = ndimage.gaussian_filter(noise, sigma=[d / divisor for d in dims], mode="wrap")
    lo, hi = field.min(), field.max()
    return (field - lo) / (hi - lo)


def base_volume(seed: int, dims: Sequence[int]) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    return 0.2 + 0.8 * smooth_field(rng, dims)


def balanced_labels(seed: int, n: int) -> np.ndarray:
    """Random class per subject with counts differing by at most one."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1AB]))
    labels = np.arange(n) % 2
    return rng.permutation(labels)


def _age(rng: np.random.Generator) -> float:
    while True:
        a = rng.normal(AGE_MEAN, AGE_SD)
        if AGE_MIN <= a <= AGE_MAX:
            return round(float(a), 1)


def _subject_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def _check(n_subjects: int, dims: Sequence[int]) -> tuple[int, int, int]:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise ConfigurationError(f"dims must be three positive extents, got {dims}")
    if n_subjects < 4:
        raise ConfigurationError("synthetic datasets need at least 4 subjects")
    return dims


def _emit(root, kind, seed, dims, params, subjects) -> DatasetManifest:
    """Write volumes and manifest; ``subjects`` yields (label, age, sex, [volumes])."""
    root = Path(root)
    records = []
    for index, (label, age, sex, volumes) in enumerate(subjects):
        sub = f"sub-{index:04d}"
        for s, vol in enumerate(volumes):
            months = 12 * s
            ses = f"ses-M{months:02d}"
            rel = f"{sub}/{ses}/{sub}_{ses}.vol3d"
            write_volume(root / rel, Volume(vol.astype(np.float32), (1.0, 1.0, 1.0), f"{kind}:{seed}:{index}:{s}"))
            records.append(SessionRecord(sub, ses, months, CLASS_DIAGNOSIS[label], age, sex, rel))
    desc = {"kind": kind, "dims": list(dims), **params}
    manifest = DatasetManifest(records, seed=seed, root=root, description=desc).with_labels()
    manifest.write(root)
    return manifest


def generate_inseparable(root, seed: int = 0, n_subjects: int = 200, dims=DEFAULT_DIMS, noise_sd: float = 0.1) -> DatasetManifest:
    """One shared base volume plus per-subject Gaussian noise; labels carry no signal."""
    dims = _check(n_subjects, dims)
    if noise_sd <= 0:
        raise ConfigurationError("noise_sd must be positive")
    base = base_volume(seed, dims)
    labels = balanced_labels(seed, n_subjects)

    def subjects():
        for i, lab in enumerate(labels):
            rng = _subject_rng(seed, i)
            age, sex = _age(rng), "M" if rng.random() < 0.5 else "F"
            yield int(lab), age, sex, [base + rng.normal(0.0, noise_sd, dims)]

    return _emit(root, "inseparable", seed, dims, {"noise_sd": noise_sd}, subjects())


def generate_separable(
    root, seed: int = 0, n_subjects: int = 200, dims=DEFAULT_DIMS, attenuation: float = 0.5, noise_sd: float = 0.1
) -> DatasetManifest:
    """Inseparable construction, then class 0 loses intensity in the left half and class 1 in the right."""
    dims = _check(n_subjects, dims)
    if not 0.0 < attenuation < 1.0:
        raise ConfigurationError("attenuation must lie in (0, 1)")
    if dims[0] % 2:
        raise ConfigurationError(f"the hemisphere axis must have an even extent, got {dims[0]}")
    base = base_volume(seed, dims)
    labels = balanced_labels(seed, n_subjects)
    half = dims[0] // 2

    def subjects():
        for i, lab in enumerate(labels):
            rng = _subject_rng(seed, i)
            age, sex = _age(rng), "M" if rng.random() < 0.5 else "F"
            vol = base + rng.normal(0.0, noise_sd, dims)
            if lab == 0:
                vol[:half] *= attenuation
            else:
                vol[half:] *= attenuation
            yield int(lab), age, sex, [vol]

    params = {"attenuation": attenuation, "noise_sd": noise_sd}
    return _emit(root, "separable", seed, dims, params, subjects())


def generate_fingerprint(
    root,
    seed: int = 0,
    n_subjects: int = 100,
    sessions_per_subject: int = 2,
    dims=DEFAULT_DIMS,
    fingerprint_amplitude: float = 1.0,
    noise_sd: float = 0.05,
) -> DatasetManifest:
    """Every subject carries a persistent random pattern shared by all of its sessions.

    Labels are random per subject, so a model can only beat chance by
    recognizing subjects it has already seen.
    """
    dims = _check(n_subjects, dims)
    if sessions_per_subject < 2:
        raise ConfigurationError("fingerprint datasets need at least two sessions per subject")
    base = base_volume(seed, dims)
    labels = balanced_labels(seed, n_subjects)

    def subjects():
        for i, lab in enumerate(labels):
            rng = _subject_rng(seed, i)
            age, sex = _age(rng), "M" if rng.random() < 0.5 else "F"
            print_ = fingerprint_amplitude * (smooth_field(rng, dims, divisor=16.0) - 0.5)
            vols = [base + print_ + rng.normal(0.0, noise_sd, dims) for _ in range(sessions_per_subject)]
            yield int(lab), age, sex, vols

    params = {"sessions_per_subject": sessions_per_subject, "fingerprint_amplitude": fingerprint_amplitude, "noise_sd": noise_sd}
    return _emit(root, "fingerprint", seed, dims, params, subjects())
