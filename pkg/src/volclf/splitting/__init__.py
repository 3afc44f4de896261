"""Subject-level splitting, the deliberate leaky split, role tokens and leakage audits."""

from volclf.splitting.access import AccessEvent, AccessLog, Quarantine, RoleToken
from volclf.splitting.audits import (
    LeakageReport,
    Verdict,
    audit_independent_test,
    audit_late_split,
    audit_transfer,
    audit_wrong_split,
    run_audits,
)
from volclf.splitting.plan import (
    Fold,
    MatchingReport,
    SplitPlan,
    TestSplit,
    make_kfold,
    make_leaky_slice_split,
    make_test_split,
    manifest_digest,
    unit_subject,
)
from volclf.splitting.prng import SplitMix64

__all__ = [
    "AccessEvent",
    "AccessLog",
    "Fold",
    "LeakageReport",
    "MatchingReport",
    "Quarantine",
    "RoleToken",
    "SplitMix64",
    "SplitPlan",
    "TestSplit",
    "Verdict",
    "audit_independent_test",
    "audit_late_split",
    "audit_transfer",
    "audit_wrong_split",
    "make_kfold",
    "make_leaky_slice_split",
    "make_test_split",
    "manifest_digest",
    "run_audits",
    "unit_subject",
]
