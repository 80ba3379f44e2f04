"""Real-time IP registry that hands out question sets.

An unseen address gets a uniformly random set.  A returning address gets a
set it has not been given yet, cycling through the pool; once every set has
been used it gets the least recently assigned one.  Flagging a session as
abnormal marks its address suspicious for the rest of the exam and moves
the session to a different set.
"""

from __future__ import annotations

import itertools
import json
import logging
import threading
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import IO, Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)


class DecisionKind(str, Enum):
    RANDOM = "RandomAssignment"
    SPECIFIC = "SpecificAssignment"
    REASSIGNMENT = "Reassignment"


class EmptySetPool(ValueError):
    pass


class UnknownSession(KeyError):
    pass


@dataclass
class IpEntry:
    first_seen: float
    sessions: list[str] = field(default_factory=list)
    suspicious: bool = False
    assigned_sets: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class SessionDecision:
    session_id: str
    set_id: str
    kind: DecisionKind

    def to_dict(self) -> dict:
        return {"session_id": self.session_id, "set_id": self.set_id, "kind": self.kind.value}


class IpRegistry:
    """Per-exam registry of every address seen so far.

    All mutating calls take one lock, so two sessions racing on a fresh
    address can never both observe it as unseen.
    """

    def __init__(
        self,
        set_pool: Sequence[str],
        clock: Callable[[], float] = time.monotonic,
        audit: "DecisionLog | None" = None,
    ):
        self.set_pool = tuple(set_pool)
        self.entries: dict[str, IpEntry] = {}
        self._session_ip: dict[str, str] = {}
        self._session_set: dict[str, str] = {}
        self._clock = clock
        self._audit = audit
        self._ids = itertools.count(1)
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, ip: str) -> bool:
        return ip in self.entries

    def register(
        self, ip: str, rng: np.random.Generator, session_id: str | None = None
    ) -> SessionDecision:
        if not self.set_pool:
            raise EmptySetPool("the exam has no question sets to assign")
        with self._lock:
            if session_id is None:
                session_id = f"s{next(self._ids):06d}"
            elif session_id in self._session_ip:
                raise ValueError(f"session {session_id!r} already registered")
            entry = self.entries.get(ip)
            if entry is None:
                entry = self.entries[ip] = IpEntry(first_seen=self._clock())
                set_id = self.set_pool[int(rng.integers(len(self.set_pool)))]
                kind = DecisionKind.RANDOM
            else:
                set_id = self._next_specific(entry)
                kind = DecisionKind.SPECIFIC
            entry.sessions.append(session_id)
            entry.assigned_sets.append(set_id)
            self._session_ip[session_id] = ip
            self._session_set[session_id] = set_id
            decision = SessionDecision(session_id, set_id, kind)
            self._record(ip, decision)
            return decision

    def _next_specific(self, entry: IpEntry) -> str:
        pool = self.set_pool
        used = set(entry.assigned_sets)
        start = pool.index(entry.assigned_sets[-1]) + 1 if entry.assigned_sets else 0
        for k in range(len(pool)):
            candidate = pool[(start + k) % len(pool)]
            if candidate not in used:
                return candidate
        # every set used already: the one whose latest use is oldest
        last_use = {s: i for i, s in enumerate(entry.assigned_sets)}
        return min(pool, key=lambda s: last_use[s])

    def flag_abnormal(self, session_id: str, rng: np.random.Generator) -> SessionDecision:
        with self._lock:
            ip = self._session_ip.get(session_id)
            if ip is None:
                raise UnknownSession(session_id)
            entry = self.entries[ip]
            entry.suspicious = True
            current = self._session_set[session_id]
            others = [s for s in self.set_pool if s != current]
            if others:
                set_id = others[int(rng.integers(len(others)))]
            else:
                log.warning("session %s: single-set pool, reassigning %s again", session_id, current)
                set_id = current
            entry.assigned_sets.append(set_id)
            self._session_set[session_id] = set_id
            decision = SessionDecision(session_id, set_id, DecisionKind.REASSIGNMENT)
            self._record(ip, decision)
            return decision

    def lookup(self, ip: str) -> IpEntry | None:
        """Snapshot of the entry for ``ip``, or None if it was never registered."""
        with self._lock:
            entry = self.entries.get(ip)
            if entry is None:
                return None
            return replace(entry, sessions=list(entry.sessions), assigned_sets=list(entry.assigned_sets))

    def session_ip(self, session_id: str) -> str | None:
        return self._session_ip.get(session_id)

    def current_set(self, session_id: str) -> str | None:
        return self._session_set.get(session_id)

    def clear(self) -> None:
        with self._lock:
            self.entries.clear()
            self._session_ip.clear()
            self._session_set.clear()

    def _record(self, ip: str, decision: SessionDecision) -> None:
        if self._audit is not None:
            self._audit.write(ip, decision)


class DecisionLog:
    """Append-only NDJSON audit trail, one object per decision."""

    def __init__(self, fh: IO[str], clock: Callable[[], float] = time.time):
        self._fh = fh
        self._clock = clock
        self._lock = threading.Lock()

    def write(self, ip: str, decision: SessionDecision) -> None:
        line = json.dumps(
            {
                "ts": self._clock(),
                "ip": ip,
                "session_id": decision.session_id,
                "kind": decision.kind.value,
                "set_id": decision.set_id,
            }
        )
        with self._lock:
            self._fh.write(line + "\n")
            self._fh.flush()
