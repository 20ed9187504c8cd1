"""Collects one verdict per acceptance criterion for the terminal summary."""

import time
from contextlib import contextmanager

RESULTS: dict[int, dict] = {}
INFO: list[tuple[int, str]] = []


@contextmanager
def timed(cid: int, limit_s: float):
    entry = {"ok": False, "detail": "did not finish", "seconds": None, "limit": limit_s}
    RESULTS[cid] = entry
    t0 = time.perf_counter()
    yield entry
    entry["seconds"] = time.perf_counter() - t0


def record(entry: dict, ok: bool, detail: str) -> bool:
    entry["ok"] = bool(ok)
    entry["detail"] = detail
    return entry["ok"]


def info(cid: int, text: str) -> None:
    INFO.append((cid, text))


def summary_lines() -> list[str]:
    lines = []
    for cid in sorted(RESULTS):
        r = RESULTS[cid]
        secs = r["seconds"]
        in_time = secs is not None and secs < r["limit"]
        verdict = "PASS" if r["ok"] and in_time else "FAIL"
        timing = "n/a" if secs is None else f"{secs:.1f}s"
        lines.append(f"criterion {cid:2d}: {verdict}  [{timing} / limit {r['limit']:.0f}s]  {r['detail']}")
        lines.extend(f"    INFO {text}" for c, text in INFO if c == cid)
    return lines
