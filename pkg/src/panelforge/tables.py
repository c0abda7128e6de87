"""Plain-text table rendering shared by the report writers."""

from __future__ import annotations

from typing import Sequence


def render_table(rows: Sequence[Sequence[str]], headers: Sequence[str] | None = None) -> str:
    """Monospace table: first column left-aligned, the rest right-aligned."""
    all_rows = ([list(headers)] if headers else []) + [list(r) for r in rows]
    if not all_rows:
        return ""
    n_cols = max(len(r) for r in all_rows)
    for r in all_rows:
        r.extend([""] * (n_cols - len(r)))
    widths = [max(len(r[c]) for r in all_rows) for c in range(n_cols)]

    def fmt(row):
        cells = [row[0].ljust(widths[0])]
        cells += [row[c].rjust(widths[c]) for c in range(1, n_cols)]
        return "  ".join(cells).rstrip()

    lines = []
    if headers:
        lines.append(fmt(all_rows[0]))
        lines.append("-" * len(lines[0]))
        body = all_rows[1:]
    else:
        body = all_rows
    lines.extend(fmt(r) for r in body)
    return "\n".join(lines) + "\n"
