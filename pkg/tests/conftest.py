import os

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_tiny(system="lti", n_train=2, n_test=1, n_meas=6, n_coll=24, sigma=0.0, seed=0,
              horizon=4.0, latent_velocity=False):
    from solis.datasets import generate_splits
    from solis.systems import InputSignal, SystemSpec
    spec = SystemSpec(system, input=InputSignal(f_min=0.1, f_max=0.5), horizon=horizon)
    return generate_splits(spec, n_train, n_test, n_meas, n_coll, sigma, seed,
                           latent_velocity=latent_velocity)


@pytest.fixture(scope="session")
def tiny_lti():
    return make_tiny()


def tiny_nets(dataset, hidden=(4,), param_hidden=(4,)):
    from solis.networks import ParameterNetwork, SolutionNetwork
    sol = SolutionNetwork(hidden=hidden, gru_hidden=2, context_points=4,
                          normalization=dataset.normalization)
    par = ParameterNetwork(hidden=param_hidden, normalization=dataset.normalization)
    return sol, par


# --- acceptance summary ---------------------------------------------------

_AC_RESULTS = []


def pytest_runtest_logreport(report):
    name = report.nodeid.split("::")[-1]
    if "test_acceptance" not in report.nodeid or not name.startswith("test_ac"):
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(report.user_properties).get("detail", "")
        label = name[len("test_"):].split("_")[0].upper()
        _AC_RESULTS.append((label, "PASS" if report.outcome == "passed" else "FAIL", detail))


def pytest_terminal_summary(terminalreporter):
    if not _AC_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    order = lambda r: int(r[0][2:])
    for label, status, detail in sorted(_AC_RESULTS, key=order):
        terminalreporter.write_line(f"{label:<5} {status}  {detail}")
