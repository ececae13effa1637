"""Collects one verdict line per acceptance criterion for the terminal summary."""

LINES: list[str] = []


def report(label: str, ok: bool, detail: str) -> bool:
    line = f"{label}: {'PASS' if ok else 'FAIL'} ({detail})"
    LINES.append(line)
    print(line)
    return ok
