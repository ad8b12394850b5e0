"""PASS/FAIL lines collected by the acceptance suite and echoed after the run."""

LINES: list[str] = []


def verdict(number: int, ok: bool, detail: str) -> bool:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
    LINES.append(line)
    print(line)
    return ok
