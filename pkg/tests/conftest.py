import functools
import time
import typing

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sodlio.config import load_config
from sodlio.pipeline import run_arrays
from sodlio.sim import scenario, simulate

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@functools.lru_cache(maxsize=None)
def dataset(name: str, seed: int = 0, duration: float | None = None):
    """Simulated streams, shared by every test in the session."""
    sc = scenario(name, seed)
    return simulate(sc, None if duration is None else sc.traj.t0 + duration)


def rig_config(ds, **flat):
    over = {k.replace(".", "__"): v for k, v in ds.config_overrides().items()}
    over.update(flat)
    return load_config().replace(**over)


def run_dataset(ds, mode="adaptive", hook=None, **flat):
    cfg = rig_config(ds, run__mode=mode, **flat)
    return run_arrays(cfg, ds.point_t, ds.points, ds.imu, ds.ground_truth(), hook)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------- acceptance report
# Tests marked ``@pytest.mark.criterion(n, title)`` produce one PASS/FAIL line
# each in the terminal summary; ``measured(...)`` attaches the key numbers.

_criteria: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")


@pytest.fixture
def measured(request):
    def note(text: str):
        request.node.user_properties.append(("measured", text))
    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when == "teardown" or (rep.when == "setup" and rep.passed):
        return
    number, title = mark.args
    notes = "; ".join(v for k, v in item.user_properties if k == "measured")
    _criteria[number] = (title, "PASS" if rep.passed else "FAIL", notes)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, verdict, notes = _criteria[number]
        line = f"{verdict} criterion {number}: {title}"
        terminalreporter.write_line(line + (f" [{notes}]" if notes else ""))


class Run(typing.NamedTuple):
    result: object
    checks: list
    seconds: float


@functools.lru_cache(maxsize=None)
def cached_run(name: str, seed: int = 0, mode: str = "adaptive", duration: float | None = None) -> Run:
    """One pipeline run per configuration and session, with per-update covariance checks.

    ``checks`` has one dict per propagate and update event; ``seconds`` is the
    wall time of the run including the checks.
    """
    ds = dataset(name, seed, duration)
    checks = []

    def hook(event, t, data):
        if event not in ("propagate", "update"):
            return
        P = data["cov"]
        row = {"event": event, "t": t,
               "asym": float(np.abs(P - P.T).max()),
               "min_eig": float(np.linalg.eigvalsh(0.5 * (P + P.T)).min()),
               "quat_err": abs(float(np.linalg.norm(data["state"].rot.q)) - 1.0),
               "trace": float(np.trace(P))}
        if event == "update":
            row["trace_prior"] = float(np.trace(data["cov_prior"]))
            row["degraded"] = data["report"].degraded
        checks.append(row)

    tic = time.perf_counter()
    result = run_dataset(ds, mode, hook)
    return Run(result, checks, time.perf_counter() - tic)
