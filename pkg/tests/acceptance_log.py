"""Pass/fail lines collected by the acceptance suite and echoed in the terminal summary."""
LINES = []


def record(name, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'}  {name}: {detail}"
    LINES.append(line)
    print(line)
    return passed
