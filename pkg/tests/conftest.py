"""Shared fixtures: one reference parameter set per model.

These are the parameter sets used throughout the suite whenever a test just
needs "a valid CIR" etc.  Statistical tolerances elsewhere assume them.
"""

import pytest

from lampsde import make_spec


def reference_specs():
    return {
        "CIR": make_spec("CIR", 0.125, kappa=2.0, theta=0.125, sigma=0.5),
        "CEV": make_spec("CEV", 0.1, kappa=2.0, theta=0.1, sigma=0.3, alpha=0.75),
        "Heston32": make_spec("Heston32", 1.0, c1=1.0, c2=1.0, c3=1.0),
        "WrightFisher": make_spec("WrightFisher", 0.5, a=1.0, b=2.0, gamma=1.0),
        "AitSahalia": make_spec("AitSahalia", 1.0, alpha_m1=1.0, alpha_0=0.5,
                                alpha_1=2.0, alpha_2=1.0, sigma=0.5, r=2.0, rho=1.5),
    }


@pytest.fixture(scope="session")
def specs():
    return reference_specs()


@pytest.fixture(scope="session")
def cir_spec(specs):
    return specs["CIR"]


@pytest.fixture(scope="session")
def cev_spec(specs):
    return specs["CEV"]


@pytest.fixture(scope="session")
def heston_spec(specs):
    return specs["Heston32"]


@pytest.fixture(scope="session")
def wf_spec(specs):
    return specs["WrightFisher"]


@pytest.fixture(scope="session")
def as_spec(specs):
    return specs["AitSahalia"]


@pytest.fixture(scope="session", params=list(reference_specs()))
def any_spec(request, specs):
    return specs[request.param]
