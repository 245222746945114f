"""Field-wise comparison of two JSON summaries."""
from __future__ import annotations

import json
import math

IGNORED = frozenset({"runtime", "generated", "artifacts"})


class ReportMismatch(ValueError):
    """The two summaries describe different scenarios."""


def load_summary(path):
    with open(path) as fh:
        return json.load(fh)


def _close(a, b, rel_tol, abs_tol):
    return math.isclose(a, b, rel_tol=rel_tol, abs_tol=abs_tol)


def _walk(a, b, path, rel_tol, abs_tol, out):
    if isinstance(a, dict) and isinstance(b, dict):
        for key in sorted(set(a) | set(b)):
            if not path and key in IGNORED:
                continue
            where = f"{path}.{key}" if path else key
            if key not in a:
                out.append(f"{where}: only in second report ({b[key]!r})")
            elif key not in b:
                out.append(f"{where}: only in first report ({a[key]!r})")
            else:
                _walk(a[key], b[key], where, rel_tol, abs_tol, out)
        return
    if isinstance(a, list) and isinstance(b, list) and len(a) == len(b):
        for i, (x, y) in enumerate(zip(a, b)):
            _walk(x, y, f"{path}[{i}]", rel_tol, abs_tol, out)
        return
    numeric = (int, float)
    if (isinstance(a, numeric) and isinstance(b, numeric)
            and not isinstance(a, bool) and not isinstance(b, bool)):
        if not _close(float(a), float(b), rel_tol, abs_tol):
            rel = abs(a - b) / max(abs(a), abs(b))
            out.append(f"{path}: {a!r} -> {b!r} (relative change {rel:.1%})")
        return
    if a != b:
        out.append(f"{path}: {a!r} -> {b!r}")


def report_diff(a, b, rel_tol=0.1, abs_tol=1e-12):
    """List of drift entries between two summaries (empty when they agree).

    Numbers are compared with a relative tolerance; runtime, timestamps and the
    artifact list are ignored.  Summaries of different scenarios raise ReportMismatch.
    """
    if a.get("scenario_id") != b.get("scenario_id"):
        raise ReportMismatch(
            f"scenario ids differ: {a.get('scenario_id')!r} vs {b.get('scenario_id')!r}")
    out = []
    _walk(a, b, "", rel_tol, abs_tol, out)
    return out
