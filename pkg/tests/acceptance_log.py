"""Shared record of acceptance outcomes, printed in the terminal summary."""
RESULTS = {}


def report(number, ok, text):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {text}"
    RESULTS[number] = line
    print(line)
    return ok
