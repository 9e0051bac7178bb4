import numpy as np
import pytest

from chunkrl.panel import Panel


def random_panel(seed=0, n=3, horizon=6, d=2):
    rng = np.random.default_rng(seed)
    return Panel(rng.normal(size=(n, horizon + 1, d)),
                 rng.choice([-1, 1], size=(n, horizon + 1)),
                 rng.normal(size=(n, horizon + 1)))


@pytest.fixture
def panel():
    return random_panel()


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", []))
            if "criterion" not in props or rep.when != "call":
                continue
            detail = ", ".join(f"{k}={v}" for k, v in props.items() if k != "criterion")
            verdict = "PASS" if outcome == "passed" else "FAIL"
            lines.append((props["criterion"], f"criterion {props['criterion']}: {verdict}  {detail}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
