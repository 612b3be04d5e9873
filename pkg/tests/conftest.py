import numpy as np
import pytest

from stochreg.model import PlantModel, preset_circuit, preset_scalar


@pytest.fixture(scope="session")
def circuit():
    return preset_circuit(1.0)


@pytest.fixture
def scalar_model():
    return preset_scalar(0.5)


def chain_model(F22=0.1, R2=0.1):
    """Double integrator measured at the first state; relative degree 2."""
    return PlantModel(A=[[0.0, 1.0], [0.0, 0.0]], B=[0.0, 1.0], P=[[0.0], [1.0]],
                      F=[[0.0, 0.0], [0.0, F22]], G=[0.0, 0.0], R=[[0.0], [R2]],
                      C=[1.0, 0.0], D=0.0, Q=[-1.0])


@pytest.fixture
def chain():
    return chain_model()


def random_stable(rng, n, margin=1.0):
    M = rng.standard_normal((n, n))
    return M - (np.max(np.linalg.eigvals(M).real) + margin) * np.eye(n)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", ()))
            if rep.when == "call" and "criterion" in props:
                lines.append((props["criterion"], outcome.upper()[:4], props.get("detail", "")))
    if lines:
        terminalreporter.section("acceptance criteria")
        for num, verdict, detail in sorted(lines):
            terminalreporter.write_line(f"criterion {num:2d}: {verdict}  {detail}")
