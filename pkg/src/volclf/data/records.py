"""Session records, diagnosis-group derivation and the dataset manifest."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from itertools import groupby
from pathlib import Path
from typing import Iterable, Sequence

from volclf.errors import DataError, FormatError

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.tsv"
LABELS_NAME = "derived_labels.tsv"
DESCRIPTION_NAME = "dataset_description.json"
MANIFEST_COLUMNS = ("participant_id", "session_id", "months", "diagnosis", "age", "sex", "volume_path")
LABEL_COLUMNS = ("participant_id", "session_id", "group", "exclusion_reason")
DIAGNOSES = ("CN", "MCI", "AD")
GROUPS = ("CN", "AD", "MCI", "sMCI", "pMCI", "EXCLUDED")


@dataclass(frozen=True)
class SessionRecord:
    subject: str
    session: str
    months: int
    diagnosis: str
    age: float
    sex: str
    volume_path: str

    def __post_init__(self):
        if self.diagnosis not in DIAGNOSES:
            raise DataError(f"{self.subject}/{self.session}: unknown diagnosis {self.diagnosis!r}")
        if self.sex not in ("M", "F"):
            raise DataError(f"{self.subject}/{self.session}: sex must be M or F")
        if self.months < 0:
            raise DataError(f"{self.subject}/{self.session}: negative months")

    @property
    def key(self) -> tuple[str, str]:
        return (self.subject, self.session)


@dataclass(frozen=True)
class DerivedLabel:
    """Diagnosis group of one session.

    ``group`` is ``None`` for sessions that belong to no group (AD sessions
    after an MCI subject converts).  sMCI and pMCI sessions also count as MCI.
    """

    group: str | None
    reason: str = ""

    @property
    def groups(self) -> frozenset[str]:
        if self.group is None or self.group == "EXCLUDED":
            return frozenset()
        if self.group in ("sMCI", "pMCI"):
            return frozenset({self.group, "MCI"})
        return frozenset({self.group})

    @property
    def excluded(self) -> bool:
        return self.group == "EXCLUDED"


def derive_labels(history: Sequence[SessionRecord], window_months: int = 36) -> list[DerivedLabel]:
    """Group label for each session of one subject, in the given order."""
    if not history:
        return []
    months = [r.months for r in history]
    if any(b <= a for a, b in zip(months, months[1:])):
        raise DataError(f"{history[0].subject}: sessions are not sorted by strictly increasing months")
    if len({r.subject for r in history}) != 1:
        raise DataError("derive_labels expects the sessions of a single subject")
    dx = [r.diagnosis for r in history]
    baseline = dx[0]
    changes = sum(a != b for a, b in zip(dx, dx[1:]))
    if baseline in ("CN", "AD"):
        if changes:
            return [DerivedLabel("EXCLUDED", f"baseline {baseline} changed diagnosis")] * len(history)
        return [DerivedLabel(baseline)] * len(history)
    if changes >= 2:
        return [DerivedLabel("EXCLUDED", "two or more diagnosis changes")] * len(history)
    if "CN" in dx:
        return [DerivedLabel("EXCLUDED", "reverted to CN")] * len(history)
    last = months[-1]
    ad_months = [m for m, d in zip(months, dx) if d == "AD"]
    out = []
    for m, d in zip(months, dx):
        if d != "MCI":
            out.append(DerivedLabel(None, "post-conversion AD session"))
        elif any(m < a <= m + window_months for a in ad_months):
            out.append(DerivedLabel("pMCI"))
        elif last - m >= window_months:
            out.append(DerivedLabel("sMCI"))
        else:
            out.append(DerivedLabel("MCI", "follow-up shorter than the window"))
    return out


@dataclass
class DatasetManifest:
    sessions: list[SessionRecord]
    labels: dict[tuple[str, str], DerivedLabel] = field(default_factory=dict)
    seed: int | None = None
    format_version: int = FORMAT_VERSION
    root: Path | None = None
    description: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sessions = sorted(self.sessions, key=lambda r: (r.subject, r.months))
        seen = set()
        for subject, group in groupby(self.sessions, key=lambda r: r.subject):
            if subject in seen:
                raise DataError(f"subject {subject} appears in two blocks")
            seen.add(subject)
            recs = list(group)
            if recs[0].months != 0 or sum(r.months == 0 for r in recs) != 1:
                raise DataError(f"{subject}: needs exactly one baseline (months=0) session")
            if len({r.months for r in recs}) != len(recs):
                raise DataError(f"{subject}: duplicate months")

    # construction ------------------------------------------------------
    def with_labels(self, window_months: int = 36) -> DatasetManifest:
        labels = {}
        for _, group in groupby(self.sessions, key=lambda r: r.subject):
            recs = list(group)
            for rec, lab in zip(recs, derive_labels(recs, window_months)):
                labels[rec.key] = lab
        return replace(self, labels=labels)

    # queries ----------------------------------------------------------
    @property
    def subjects(self) -> list[str]:
        return sorted({r.subject for r in self.sessions})

    def sessions_of(self, subject: str) -> list[SessionRecord]:
        return [r for r in self.sessions if r.subject == subject]

    def label(self, record: SessionRecord) -> DerivedLabel:
        try:
            return self.labels[record.key]
        except KeyError:
            raise DataError(f"no derived label for {record.key}; run derive-labels first") from None

    def volume_path(self, record: SessionRecord) -> Path:
        p = Path(record.volume_path)
        return p if p.is_absolute() or self.root is None else self.root / p

    def subject_groups(self, subject: str) -> frozenset[str]:
        out = set()
        for rec in self.sessions_of(subject):
            out |= self.label(rec).groups
        return frozenset(out)

    def subjects_by_class(self, classes: Sequence[str]) -> dict[str, str]:
        """Subject -> class for subjects whose sessions fall in exactly one of ``classes``."""
        out = {}
        for subject in self.subjects:
            hit = [c for c in classes if c in self.subject_groups(subject)]
            if len(hit) == 1:
                out[subject] = hit[0]
        return out

    # io ---------------------------------------------------------------
    def write(self, root: str | Path) -> None:
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        with open(root / MANIFEST_NAME, "w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(MANIFEST_COLUMNS)
            for r in self.sessions:
                w.writerow([r.subject, r.session, r.months, r.diagnosis, f"{r.age:.1f}", r.sex, r.volume_path])
        if self.labels:
            self.write_labels(root)
        desc = dict(self.description, format_version=self.format_version, seed=self.seed)
        (root / DESCRIPTION_NAME).write_text(json.dumps(desc, sort_keys=True, indent=1) + "\n")

    def write_labels(self, root: str | Path) -> None:
        with open(Path(root) / LABELS_NAME, "w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(LABEL_COLUMNS)
            for r in self.sessions:
                lab = self.label(r)
                w.writerow([r.subject, r.session, lab.group or "n/a", lab.reason or "n/a"])

    @classmethod
    def read(cls, root: str | Path) -> DatasetManifest:
        root = Path(root)
        path = root / MANIFEST_NAME
        if not path.exists():
            raise FormatError(f"{path} not found")
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh, delimiter="\t"))
        if not rows or tuple(rows[0]) != MANIFEST_COLUMNS:
            raise FormatError(f"{path}: header must be {'/'.join(MANIFEST_COLUMNS)}")
        try:
            sessions = [
                SessionRecord(r[0], r[1], int(r[2]), r[3], float(r[4]), r[5], r[6]) for r in rows[1:] if r
            ]
        except (ValueError, IndexError) as exc:
            raise FormatError(f"{path}: {exc}") from exc
        labels = {}
        lpath = root / LABELS_NAME
        if lpath.exists():
            with open(lpath, newline="") as fh:
                lrows = list(csv.reader(fh, delimiter="\t"))
            if not lrows or tuple(lrows[0]) != LABEL_COLUMNS:
                raise FormatError(f"{lpath}: unexpected header")
            for r in lrows[1:]:
                if r:
                    labels[(r[0], r[1])] = DerivedLabel(None if r[2] == "n/a" else r[2], "" if r[3] == "n/a" else r[3])
        desc = {}
        dpath = root / DESCRIPTION_NAME
        if dpath.exists():
            desc = json.loads(dpath.read_text())
        seed = desc.pop("seed", None)
        version = desc.pop("format_version", FORMAT_VERSION)
        return cls(sessions, labels, seed, version, root, desc)


def select_sessions(manifest: DatasetManifest, mode: str = "baseline") -> list[SessionRecord]:
    """Baseline sessions only, or every labeled non-excluded session."""
    if mode not in ("baseline", "longitudinal"):
        raise DataError(f"unknown session mode {mode!r}")
    out = []
    for rec in manifest.sessions:
        lab = manifest.label(rec)
        if lab.excluded or lab.group is None:
            continue
        if mode == "baseline" and rec.months != 0:
            continue
        out.append(rec)
    return out


def sessions_for_task(
    manifest: DatasetManifest, classes: Sequence[str], mode: str = "baseline", subjects: Iterable[str] | None = None
) -> list[tuple[SessionRecord, int]]:
    """(session, class index) pairs for a two-group task such as ("CN", "AD")."""
    wanted = set(subjects) if subjects is not None else None
    out = []
    for rec in select_sessions(manifest, mode):
        if wanted is not None and rec.subject not in wanted:
            continue
        groups = manifest.label(rec).groups
        hit = [i for i, c in enumerate(classes) if c in groups]
        if len(hit) == 1:
            out.append((rec, hit[0]))
    return out
