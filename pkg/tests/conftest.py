import os
import sys

import numpy as np
import pytest

# Add the repo root to Python path so tests import the modules like main.py does
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from models import JumpLaw, LevyTriplet, RngStream
from services.kernel_service import KernelService
from services.levy_service import LevyService
from services.closed_form_service import ClosedFormService
from services.stats_service import StatsService
from services.chain_service import ChainService
from services.fleming_viot_service import FlemingViotService
from services.branching_service import BranchingService
from services.pde_service import PdeService

SEED = 20240601


@pytest.fixture
def rng():
    return RngStream(seed=SEED, stream_id=7).generator()


@pytest.fixture(scope="session")
def kernel_service():
    return KernelService()


@pytest.fixture(scope="session")
def levy_service():
    return LevyService()


@pytest.fixture(scope="session")
def closed_form_service():
    return ClosedFormService()


@pytest.fixture(scope="session")
def stats_service():
    return StatsService()


@pytest.fixture(scope="session")
def chain_service():
    return ChainService()


@pytest.fixture(scope="session")
def fleming_viot_service(kernel_service):
    return FlemingViotService(kernel_service)


@pytest.fixture(scope="session")
def branching_service(kernel_service, levy_service, stats_service):
    return BranchingService(kernel_service, levy_service, stats_service)


@pytest.fixture(scope="session")
def pde_service(stats_service):
    return PdeService(stats_service)


@pytest.fixture
def brownian():
    return LevyTriplet.brownian()


@pytest.fixture
def exp_jumps_triplet():
    """sigma=1 with symmetric two-sided exponential jumps, rate 2, intensity 1"""
    return LevyTriplet.centered(diffusion=1.0, jumps=JumpLaw.two_sided_exponential(rate=2.0, intensity=1.0))


@pytest.fixture
def birth_death_chain(chain_service):
    return chain_service.birth_death_chain(0.3, 0.4, 20)
