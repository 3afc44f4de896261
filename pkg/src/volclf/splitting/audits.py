"""Checks for the four ways test data leaks into model development."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

from volclf.splitting.access import AccessLog
from volclf.splitting.plan import SplitPlan, unit_subject

PASS, FAIL, NOT_APPLICABLE = "pass", "fail", "not_applicable"
CAUSES = ("wrong_split", "late_split", "biased_transfer", "no_independent_test")


@dataclass(frozen=True)
class Verdict:
    status: str
    evidence: tuple[str, ...] = ()

    def __post_init__(self):
        if self.status not in (PASS, FAIL, NOT_APPLICABLE):
            raise ValueError(f"unknown verdict {self.status!r}")
        if self.status == FAIL and not self.evidence:
            raise ValueError("a failing verdict needs evidence")

    @property
    def failed(self) -> bool:
        return self.status == FAIL


def _verdict(evidence: list[str]) -> Verdict:
    return Verdict(FAIL, tuple(evidence)) if evidence else Verdict(PASS)


def audit_wrong_split(plan: SplitPlan, manifest=None) -> Verdict:
    """Fails when a subject's units hold more than one role within a fold."""
    test_subjects = {unit_subject(u) for u in plan.test}
    evidence = []
    for j, fold in enumerate(plan.folds):
        roles: dict[str, set[str]] = defaultdict(set)
        for s in test_subjects:
            roles[s].add("test")
        for u in fold.train:
            roles[unit_subject(u)].add("train")
        for u in fold.validation:
            roles[unit_subject(u)].add("validation")
        for s in sorted(roles):
            if len(roles[s]) > 1:
                evidence.append(f"fold {j}: {s} in {'+'.join(sorted(roles[s]))}")
    if manifest is not None:
        known = set(manifest.subjects)
        for u in plan.test + tuple(u for f in plan.folds for u in f.train + f.validation):
            if unit_subject(u) not in known:
                evidence.append(f"{unit_subject(u)} not in manifest")
                break
    return _verdict(evidence)


def audit_late_split(log: AccessLog, plan: SplitPlan) -> Verdict:
    """Fails when pretraining or augmentation read a validation or test subject."""
    events = [e for e in log.events if e.phase in ("ae_pretrain", "augment")]
    if not events:
        return Verdict(NOT_APPLICABLE)
    evidence = []
    for e in events:
        role = e.role
        if role not in ("validation", "test"):
            # read before or outside the split: judge by the plan
            role = plan.role(e.subject, e.fold)
            if role is None and e.fold is None:
                in_val = any(e.subject in plan.subjects(j, "validation") for j in range(plan.k))
                role = "validation" if in_val else None
        if role in ("validation", "test"):
            evidence.append(f"{e.phase} read {e.subject} ({role}, fold {e.fold})")
    return _verdict(sorted(set(evidence)))


def audit_transfer(source_plan: SplitPlan, target_plan: SplitPlan) -> Verdict:
    """Fails when a subject used to develop the source model is in the target test set."""
    overlap = source_plan.trainval_subjects() & {unit_subject(u) for u in target_plan.test}
    return _verdict([f"{s} trained the source and tests the target" for s in sorted(overlap)])


def audit_independent_test(log: AccessLog, plan: SplitPlan) -> Verdict:
    """Fails when model selection touched a test subject or a test set was evaluated twice."""
    test_subjects = {unit_subject(u) for u in plan.test}
    evidence = []
    for e in log.events:
        if e.phase == "model_select" and (e.role == "test" or e.subject in test_subjects):
            evidence.append(f"model selection read test subject {e.subject}")
    runs: dict[str, set[str]] = defaultdict(set)
    for e in log.events:
        if e.phase == "final_eval":
            runs[e.experiment].add(e.invocation)
    for exp, invocations in sorted(runs.items()):
        if len(invocations) > 1:
            evidence.append(f"experiment {exp or '<unnamed>'} evaluated on the test set {len(invocations)} times")
    return _verdict(sorted(set(evidence)))


@dataclass(frozen=True)
class LeakageReport:
    verdicts: dict[str, Verdict] = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return any(v.failed for v in self.verdicts.values())

    def as_text(self) -> str:
        lines = []
        for cause in CAUSES:
            v = self.verdicts.get(cause, Verdict(NOT_APPLICABLE))
            lines.append(f"{cause}\t{v.status}")
            lines += [f"  {item}" for item in v.evidence[:20]]
            if len(v.evidence) > 20:
                lines.append(f"  ... {len(v.evidence) - 20} more")
        return "\n".join(lines) + "\n"


def run_audits(
    plan: SplitPlan, log: AccessLog | None = None, source_plan: SplitPlan | None = None, manifest=None
) -> LeakageReport:
    verdicts = {"wrong_split": audit_wrong_split(plan, manifest)}
    if log is not None:
        verdicts["late_split"] = audit_late_split(log, plan)
        verdicts["no_independent_test"] = audit_independent_test(log, plan)
    else:
        verdicts["late_split"] = verdicts["no_independent_test"] = Verdict(NOT_APPLICABLE)
    verdicts["biased_transfer"] = audit_transfer(source_plan, plan) if source_plan is not None else Verdict(NOT_APPLICABLE)
    return LeakageReport(verdicts)
