"""Role tokens and the append-only access log that the leakage audits read."""

from __future__ import annotations

import csv
import io
import secrets
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from volclf.errors import FormatError, LeakageError
from volclf.splitting.plan import SplitPlan, unit_subject

PHASES = ("ae_pretrain", "augment", "train", "model_select", "final_eval")
LOG_COLUMNS = ("phase", "subject", "role", "experiment", "fold", "invocation")


@dataclass(frozen=True)
class AccessEvent:
    phase: str
    subject: str
    role: str  # role of the subject when it was read; "unassigned" before any split
    experiment: str = ""
    fold: int | None = None
    invocation: str = ""


class AccessLog:
    """Thread-safe, append-only event list."""

    def __init__(self, events: Iterable[AccessEvent] = ()):
        self._events: list[AccessEvent] = list(events)
        self._lock = threading.Lock()

    def append(self, event: AccessEvent) -> None:
        if event.phase not in PHASES:
            raise ValueError(f"unknown phase {event.phase!r}")
        with self._lock:
            self._events.append(event)

    def extend(self, events: Iterable[AccessEvent]) -> None:
        for e in events:
            self.append(e)

    @property
    def events(self) -> tuple[AccessEvent, ...]:
        with self._lock:
            return tuple(self._events)

    def __len__(self) -> int:
        return len(self._events)

    def to_tsv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, delimiter="\t", lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for e in self.events:
            w.writerow([e.phase, e.subject, e.role, e.experiment, "" if e.fold is None else e.fold, e.invocation])
        return buf.getvalue()

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_tsv(), encoding="utf-8")

    @classmethod
    def read(cls, path: str | Path) -> AccessLog:
        rows = list(csv.reader(io.StringIO(Path(path).read_text(encoding="utf-8")), delimiter="\t"))
        if not rows or tuple(rows[0]) != LOG_COLUMNS:
            raise FormatError(f"{path}: not an access log")
        events = []
        for r in rows[1:]:
            if r:
                events.append(AccessEvent(r[0], r[1], r[2], r[3], int(r[4]) if r[4] else None, r[5]))
        return cls(events)


@dataclass(frozen=True)
class RoleToken:
    """Capability to read the units holding ``role`` in ``fold`` of one plan."""

    plan_digest: str
    fold: int | None
    role: str
    nonce: str


class Quarantine:
    """Mints role tokens for a plan and checks every unit read against them."""

    def __init__(self, plan: SplitPlan, log: AccessLog, experiment: str = ""):
        self.plan = plan
        self.log = log
        self.experiment = experiment
        self._issued: set[RoleToken] = set()

    def token(self, fold: int | None, role: str) -> RoleToken:
        if role not in ("train", "validation", "test"):
            raise ValueError(f"unknown role {role!r}")
        if role != "test" and fold is None:
            raise ValueError("train/validation tokens need a fold")
        tok = RoleToken(self.plan.digest, None if role == "test" else fold, role, secrets.token_hex(8))
        self._issued.add(tok)
        return tok

    def check(self, token: RoleToken, units: Iterable[str], phase: str, invocation: str = "") -> None:
        """Log the access of ``units`` and raise if any unit is outside the token's role."""
        if token not in self._issued or token.plan_digest != self.plan.digest:
            raise LeakageError("role token was not minted for this split plan", (repr(token),))
        if phase == "train" and token.role != "train":
            self._record(units, phase, token, invocation)
            raise LeakageError(f"gradient updates requested on {token.role} units", tuple(units)[:5])
        bad = []
        for u in units:
            actual = self.plan.role(u, token.fold)
            if actual != token.role and not (token.role == "test" and actual == "test"):
                bad.append(f"{u} is {actual or 'unassigned'}, token grants {token.role}")
        self._record(units, phase, token, invocation)
        if bad:
            raise LeakageError(f"{len(bad)} units read outside their role", bad[:10])

    def _record(self, units, phase, token, invocation):
        seen = set()
        for u in units:
            s = unit_subject(u)
            if s in seen:
                continue
            seen.add(s)
            role = self.plan.role(u, token.fold) or "unassigned"
            self.log.append(AccessEvent(phase, s, role, self.experiment, token.fold, invocation))
