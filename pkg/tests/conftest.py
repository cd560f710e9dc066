import numpy as np
import pytest
from hypothesis import settings

from implicit_points.scene import CameraView, PointSet

settings.register_profile("repo", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("repo")


def random_points(rng, n, z=(0.5, 3.0), spread=1.0):
    pos = np.c_[rng.uniform(-spread, spread, n), rng.uniform(-spread, spread, n),
                rng.uniform(*z, n)]
    return PointSet(pos, rng.uniform(0, 0.95, n), rng.normal(size=(n, 4, 9)) * 0.5)


@pytest.fixture
def small_camera():
    return CameraView(fx=40.0, fy=40.0, cx=16.0, cy=12.0, width=32, height=24, z_near=0.1)


@pytest.fixture(scope="session")
def distilled_sh():
    """Desk-scale distillation of the band-limited oracle, shared across files."""
    import time

    from implicit_points.envmap import DistillConfig, SHBackground, distill_env
    oracle = SHBackground.from_seed(0)
    t0 = time.perf_counter()
    res = distill_env(oracle, DistillConfig(probe=1 << 14, probe_every=10))
    return oracle, res, time.perf_counter() - t0


# --------------------------------------------------------------------------
# Acceptance report: one PASS/FAIL line per criterion in the terminal summary
# --------------------------------------------------------------------------

CRITERIA = 11
_ACCEPT = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPT] = {}


@pytest.fixture
def criterion(request):
    """``criterion(n, title, ok, detail)`` records, prints and asserts one result."""
    results = request.config.stash[_ACCEPT]

    def record(n, title, ok, detail):
        prev = results.get(n)
        ok = bool(ok) and (prev is None or prev[1])
        results[n] = (title, ok, detail if prev is None else f"{prev[2]}; {detail}")
        print(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {title} ({detail})")
        assert ok, f"criterion {n} failed: {detail}"
    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_ACCEPT, {})
    ran = any("test_acceptance" in str(r.nodeid) for k in ("passed", "failed", "error")
              for r in terminalreporter.stats.get(k, []))
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, CRITERIA + 1):
        if n in results:
            title, ok, detail = results[n]
            terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")
        else:
            terminalreporter.write_line(f"[FAIL] {n:2d}. not reached")
