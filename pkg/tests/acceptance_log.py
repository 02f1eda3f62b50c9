"""Collects one pass/fail line per acceptance criterion for the terminal summary."""
from __future__ import annotations

RESULTS: dict[str, tuple[bool, str]] = {}


def record(cid: str, ok: bool, detail: str) -> bool:
    RESULTS[cid] = (bool(ok), detail)
    print(f"{cid} {'PASS' if ok else 'FAIL'}  {detail}")
    return bool(ok)


def lines() -> list[str]:
    key = lambda c: int(c[1:]) if c[1:].isdigit() else 99
    return [f"{c:<4s}{'PASS' if ok else 'FAIL'}  {d}" for c, (ok, d) in sorted(RESULTS.items(), key=lambda kv: key(kv[0]))]
