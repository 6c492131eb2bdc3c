"""Shared record of acceptance outcomes, printed in the pytest summary."""
LINES = {}


def record(n, ok, detail):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    LINES[n] = line
    print(line, flush=True)
    return ok
