"""Subject-level test split, stratified k-fold plans and the deliberate leaky split."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from volclf.data.records import DatasetManifest
from volclf.errors import ConfigurationError, FormatError, MatchingError
from volclf.splitting.prng import SplitMix64, derive_seed

ROLES = ("train", "validation", "test")
UNIT_SEPARATOR = ":"


def unit_subject(unit_id: str) -> str:
    """Subject owning a unit id (``sub-0001:ses-M00:12`` -> ``sub-0001``)."""
    return unit_id.split(UNIT_SEPARATOR, 1)[0]


def manifest_digest(manifest: DatasetManifest) -> str:
    h = hashlib.sha256()
    for r in manifest.sessions:
        h.update(f"{r.subject}\t{r.session}\t{r.months}\t{r.diagnosis}\t{r.age:.1f}\t{r.sex}\n".encode())
    for key in sorted(manifest.labels):
        lab = manifest.labels[key]
        h.update(f"{key[0]}\t{key[1]}\t{lab.group}\n".encode())
    return h.hexdigest()


@dataclass(frozen=True)
class Fold:
    train: tuple[str, ...]
    validation: tuple[str, ...]


@dataclass(frozen=True)
class SplitPlan:
    """Assignment of units to test and, per fold, to train or validation.

    For ``granularity="subject"`` the ids are subject ids; for ``"slice"``
    they are unit ids whose prefix before ``:`` is the subject.  Test ids are
    always subjects.
    """

    seed: int
    k: int
    granularity: str
    test: tuple[str, ...]
    folds: tuple[Fold, ...]
    provenance: str = ""  # manifest digest and parameters, hashed into the digest
    _lookup: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.granularity not in ("subject", "slice"):
            raise ConfigurationError(f"unknown granularity {self.granularity!r}")
        if len(self.folds) != self.k:
            raise ConfigurationError(f"plan declares k={self.k} but has {len(self.folds)} folds")

    # rows / digest --------------------------------------------------------
    def rows(self) -> list[tuple[str, int, str]]:
        out = [(s, -1, "test") for s in sorted(self.test)]
        for j, fold in enumerate(self.folds):
            out += [(s, j, "train") for s in sorted(fold.train)]
            out += [(s, j, "validation") for s in sorted(fold.validation)]
        return out

    @property
    def digest(self) -> str:
        h = hashlib.sha256(f"seed={self.seed} k={self.k} granularity={self.granularity} provenance={self.provenance}\n".encode())
        for s, j, role in self.rows():
            h.update(f"{s}\t{j}\t{role}\n".encode())
        return h.hexdigest()

    def to_tsv(self) -> str:
        lines = [f"# seed={self.seed} k={self.k} granularity={self.granularity} digest={self.digest}"]
        if self.provenance:
            lines.append(f"# provenance={self.provenance}")
        lines.append("subject_id\tfold\trole")
        lines += [f"{s}\t{j}\t{role}" for s, j, role in self.rows()]
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_tsv(), encoding="utf-8", newline="\n")

    @classmethod
    def read(cls, path: str | Path) -> SplitPlan:
        return cls.from_tsv(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def from_tsv(cls, text: str) -> SplitPlan:
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# "):
            raise FormatError("split plan must start with a '# seed=... k=...' comment")
        head = dict(tok.split("=", 1) for tok in lines[0][2:].split())
        provenance = ""
        body = lines[1:]
        if body and body[0].startswith("# provenance="):
            provenance = body[0][len("# provenance=") :]
            body = body[1:]
        if not body or body[0] != "subject_id\tfold\trole":
            raise FormatError("split plan is missing its column header")
        k = int(head["k"])
        test, train, val = [], [[] for _ in range(k)], [[] for _ in range(k)]
        for line in body[1:]:
            if not line:
                continue
            s, j, role = line.split("\t")
            j = int(j)
            if role == "test":
                test.append(s)
            elif role == "train":
                train[j].append(s)
            elif role == "validation":
                val[j].append(s)
            else:
                raise FormatError(f"unknown role {role!r}")
        plan = cls(
            int(head["seed"]), k, head["granularity"], tuple(test),
            tuple(Fold(tuple(t), tuple(v)) for t, v in zip(train, val)), provenance,
        )
        if "digest" in head and head["digest"] != plan.digest:
            raise FormatError("split plan digest does not match its contents")
        return plan

    # queries ----------------------------------------------------------------
    def role(self, unit: str, fold: int | None) -> str | None:
        """Role of a unit (or of a subject's units) in ``fold``; ``None`` if unassigned."""
        if not self._lookup:
            table = {("test", s): True for s in self.test}
            for j, f in enumerate(self.folds):
                for s in f.train:
                    table[(j, s)] = "train"
                for s in f.validation:
                    table[(j, s)] = "validation"
            self._lookup.update(table)
        if ("test", unit) in self._lookup or ("test", unit_subject(unit)) in self._lookup:
            return "test"
        if fold is None:
            return None
        return self._lookup.get((fold, unit))

    def units(self, fold: int, role: str) -> tuple[str, ...]:
        if role == "test":
            return self.test
        f = self.folds[fold]
        return f.train if role == "train" else f.validation

    def subjects(self, fold: int, role: str) -> set[str]:
        return {unit_subject(u) for u in self.units(fold, role)}

    def trainval_subjects(self) -> set[str]:
        out = set()
        for f in self.folds:
            out |= {unit_subject(u) for u in f.train + f.validation}
        return out


# test split -------------------------------------------------------------------


@dataclass(frozen=True)
class MatchingReport:
    attempt: int
    p_age: float
    p_sex: float
    alpha: float
    accepted: bool

    def as_text(self) -> str:
        verdict = "accepted" if self.accepted else "rejected"
        return f"attempt={self.attempt} p_age={self.p_age:.4f} p_sex={self.p_sex:.4f} alpha={self.alpha} {verdict}"


@dataclass(frozen=True)
class TestSplit:
    test: tuple[str, ...]
    trainval: tuple[str, ...]
    report: MatchingReport


def _baseline_demographics(manifest: DatasetManifest, subjects: Iterable[str]):
    ages, males = [], []
    for s in subjects:
        rec = manifest.sessions_of(s)[0]
        ages.append(rec.age)
        males.append(rec.sex == "M")
    return np.array(ages), np.array(males)


def sex_p_value(test_males: np.ndarray, rest_males: np.ndarray) -> float:
    table = np.array(
        [[test_males.sum(), (~test_males).sum()], [rest_males.sum(), (~rest_males).sum()]], dtype=float
    )
    if (table.sum(axis=0) == 0).any():
        return 1.0  # one sex absent everywhere: nothing to mismatch
    return float(stats.chi2_contingency(table, correction=True)[1])


def age_p_value(test_ages: np.ndarray, rest_ages: np.ndarray) -> float:
    if np.ptp(np.concatenate([test_ages, rest_ages])) == 0:
        return 1.0
    return float(stats.ttest_ind(test_ages, rest_ages, equal_var=False).pvalue)


def make_test_split(
    manifest: DatasetManifest,
    n_per_class: int,
    seed: int = 2,
    classes: Sequence[str] = ("CN", "AD"),
    max_retries: int = 100,
    alpha: float = 0.05,
) -> TestSplit:
    """Draw ``n_per_class`` subjects per class whose age and sex match the remainder."""
    by_class = manifest.subjects_by_class(classes)
    pools = {c: sorted(s for s, k in by_class.items() if k == c) for c in classes}
    for c, members in pools.items():
        if len(members) <= n_per_class:
            raise ConfigurationError(f"class {c} has {len(members)} subjects; need more than {n_per_class}")
    everyone = manifest.subjects
    best = None
    for attempt in range(max_retries):
        prng = SplitMix64(derive_seed(seed, attempt))
        test = []
        for c in classes:
            members = list(pools[c])
            prng.shuffle(members)
            test += members[:n_per_class]
        chosen = set(test)
        rest = [s for s in everyone if s not in chosen]
        ta, tm = _baseline_demographics(manifest, sorted(chosen))
        ra, rm = _baseline_demographics(manifest, rest)
        report = MatchingReport(attempt, age_p_value(ta, ra), sex_p_value(tm, rm), alpha, False)
        if report.p_age > alpha and report.p_sex > alpha:
            accepted = MatchingReport(attempt, report.p_age, report.p_sex, alpha, True)
            return TestSplit(tuple(sorted(chosen)), tuple(rest), accepted)
        if best is None or min(report.p_age, report.p_sex) > min(best.p_age, best.p_sex):
            best = report
    raise MatchingError(f"no demographically matched test draw within {max_retries} attempts; best: {best.as_text()}", best)


# k-fold ---------------------------------------------------------------------


def deal_folds(labels: Mapping[str, object], k: int, seed: int) -> dict[str, int]:
    """Class-stratified fold index per id: sort, shuffle once, deal round-robin per class."""
    ids = sorted(labels)
    SplitMix64(seed).shuffle(ids)
    classes = sorted({str(labels[i]) for i in ids})
    out, offset = {}, 0
    for c in classes:
        members = [i for i in ids if str(labels[i]) == c]
        for n, i in enumerate(members):
            out[i] = (n + offset) % k
        offset += len(members)
    return out


def _plan_from_assignment(assign: dict[str, int], k, seed, granularity, test, provenance) -> SplitPlan:
    folds = []
    for j in range(k):
        val = tuple(sorted(u for u, f in assign.items() if f == j))
        train = tuple(sorted(u for u, f in assign.items() if f != j))
        folds.append(Fold(train, val))
    return SplitPlan(seed, k, granularity, tuple(sorted(test)), tuple(folds), provenance)


def make_kfold(
    subject_labels: Mapping[str, object], k: int = 5, seed: int = 2, test: Iterable[str] = (), provenance: str = ""
) -> SplitPlan:
    """Subject-level stratified k-fold plan over the train/validation subjects."""
    if k < 2:
        raise ConfigurationError("k must be at least 2")
    counts: dict[str, int] = {}
    for v in subject_labels.values():
        counts[str(v)] = counts.get(str(v), 0) + 1
    if len(subject_labels) < k or min(counts.values(), default=0) < k:
        raise ConfigurationError(f"need at least {k} subjects per class for {k} folds, have {counts}")
    test = tuple(test)
    overlap = set(test) & set(subject_labels)
    if overlap:
        raise ConfigurationError(f"test subjects also listed for cross-validation: {sorted(overlap)[:5]}")
    params = json.dumps({"k": k, "seed": seed, "kind": "kfold"}, sort_keys=True)
    prov = hashlib.sha256((provenance + params).encode()).hexdigest()[:16]
    return _plan_from_assignment(deal_folds(subject_labels, k, seed), k, seed, "subject", test, prov)


def make_leaky_slice_split(
    unit_labels: Mapping[str, object], k: int = 5, seed: int = 2, test: Iterable[str] = (), provenance: str = ""
) -> SplitPlan:
    """Fold assignment of individual slices, ignoring which subject they come from.

    This reproduces the wrong-split leak on purpose; the resulting plan is
    marked ``granularity="slice"`` and fails ``audit_wrong_split``.
    """
    if k < 2:
        raise ConfigurationError("k must be at least 2")
    params = json.dumps({"k": k, "seed": seed, "kind": "leaky_slice"}, sort_keys=True)
    prov = hashlib.sha256((provenance + params).encode()).hexdigest()[:16]
    return _plan_from_assignment(deal_folds(unit_labels, k, seed), k, seed, "slice", test, prov)
