"""Omission and readmission of clients based on smoothed trust."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Mapping

INCLUDED = "included"
OMITTED = "omitted"
READMIT_ROUNDS = 2


@dataclass(frozen=True)
class ClientStatus:
    client_id: int
    status: str = INCLUDED
    rounds_above_tau: int = 0


@dataclass(frozen=True)
class RoundDecision:
    omitted_now: frozenset
    readmitted_now: frozenset
    active_set: frozenset


def register_clients(ids: Iterable) -> dict:
    ids = list(ids)
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate client id")
    return {cid: ClientStatus(cid) for cid in ids}


def decide_round(
    statuses: Mapping,
    smoothed: Mapping,
    tau: float,
    m: int,
) -> tuple[RoundDecision, dict]:
    """Apply one round of the participation rules.

    Included clients below ``tau`` are candidates for omission; at most ``m``
    of them (lowest trust first, ties by client id) are omitted. Omitted
    clients at or above ``tau`` for two consecutive rounds are readmitted.
    """
    missing = [cid for cid in statuses if cid not in smoothed]
    if missing:
        raise KeyError(f"missing smoothed trust for clients {sorted(missing)}")

    updated = dict(statuses)
    candidates = []
    readmitted = set()
    for cid in sorted(statuses):
        st = statuses[cid]
        score = smoothed[cid]
        if st.status == INCLUDED:
            if score < tau:
                candidates.append((score, cid))
        elif score >= tau:
            count = st.rounds_above_tau + 1
            if count >= READMIT_ROUNDS:
                updated[cid] = replace(st, status=INCLUDED, rounds_above_tau=0)
                readmitted.add(cid)
            else:
                updated[cid] = replace(st, rounds_above_tau=count)
        else:
            updated[cid] = replace(st, rounds_above_tau=0)

    omitted = set()
    for _, cid in sorted(candidates)[: max(m, 0)]:
        updated[cid] = replace(updated[cid], status=OMITTED, rounds_above_tau=0)
        omitted.add(cid)

    active = frozenset(cid for cid, st in updated.items() if st.status == INCLUDED)
    return RoundDecision(frozenset(omitted), frozenset(readmitted), active), updated
