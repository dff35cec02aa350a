from __future__ import annotations

import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# filled by test_acceptance.py: criterion id -> (passed, detail)
ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def record_criterion():
    def _record(cid: str, passed: bool, detail: str) -> None:
        ACCEPTANCE_RESULTS[cid] = (bool(passed), detail)
        print(f"[acceptance] {cid}: {'PASS' if passed else 'FAIL'} {detail}")

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k.split()[0].rstrip(":").lstrip("C"))):
        ok, detail = ACCEPTANCE_RESULTS[cid]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {cid}  {detail}")


@pytest.fixture(scope="session")
def small_cfg():
    from adaptmit.config import ExperimentConfig

    cfg = ExperimentConfig()
    cfg = cfg.with_overrides("run", T_run=40, train_seeds=2, eval_seeds=2)
    cfg = cfg.with_overrides("svgp", M=8, iters=30)
    return cfg.with_overrides("plant", shots=200)


@pytest.fixture(scope="session")
def small_stack(small_cfg):
    from adaptmit import orchestrator as orc

    runs = orc.collect_traces(small_cfg, small_cfg.train_seeds())
    return orc.train_offline(runs, small_cfg)
