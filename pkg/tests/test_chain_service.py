import numpy as np
import pytest

from models import SubstochasticMatrix
from exceptions import ExtinctionError, ParameterError, StructureError


def _tv(a, b):
    return 0.5 * float(np.abs(np.asarray(a) - np.asarray(b)).sum())


def test_matrix_validation():
    with pytest.raises(ValueError):
        SubstochasticMatrix(entries=[[0.5, 0.6], [0.1, 0.1]])
    with pytest.raises(ValueError):
        SubstochasticMatrix(entries=[[0.5, 0.5], [0.5, 0.5]])
    with pytest.raises(ValueError):
        SubstochasticMatrix(entries=[[-0.1]])


def test_birth_death_chain_shape(chain_service, birth_death_chain):
    p = birth_death_chain.entries
    assert birth_death_chain.n == 20
    rows = p.sum(axis=1)
    assert rows[0] == pytest.approx(0.6)
    np.testing.assert_allclose(rows[1:], 1.0)
    with pytest.raises(ParameterError):
        chain_service.birth_death_chain(0.5, 0.6, 5)


def test_conditioned_evolution_trivial_cases(chain_service, birth_death_chain):
    mu0 = np.zeros(20)
    mu0[9] = 1.0
    np.testing.assert_array_equal(chain_service.conditioned_evolution(birth_death_chain, mu0, 0), mu0)
    single = SubstochasticMatrix(entries=[[0.5]])
    for steps in (1, 7, 50):
        np.testing.assert_allclose(chain_service.conditioned_evolution(single, [1.0], steps), [1.0])


def test_conditioned_evolution_rejects_bad_law(chain_service, birth_death_chain):
    with pytest.raises(ParameterError):
        chain_service.conditioned_evolution(birth_death_chain, np.full(20, 0.1), 5)
    with pytest.raises(ParameterError):
        chain_service.conditioned_evolution(birth_death_chain, [1.0], 5)


def test_conditioned_evolution_extinction(chain_service):
    nilpotent = SubstochasticMatrix(entries=[[0.0, 1.0], [0.0, 0.0]])
    with pytest.raises(ExtinctionError):
        chain_service.conditioned_evolution(nilpotent, [1.0, 0.0], 3)


def test_conditioned_evolution_reaches_nu(chain_service, birth_death_chain):
    triple = chain_service.eigentriple(birth_death_chain)
    mu0 = np.zeros(20)
    mu0[9] = 1.0
    assert _tv(chain_service.conditioned_evolution(birth_death_chain, mu0, 3000), triple.nu) < 1e-8


@pytest.mark.parametrize("entries,R,nu", [
    ([[0.5]], 2.0, [1.0]),
    ([[0.0, 0.5], [0.5, 0.0]], 2.0, [0.5, 0.5]),
])
def test_eigentriple_small(chain_service, entries, R, nu):
    triple = chain_service.eigentriple(SubstochasticMatrix(entries=entries))
    assert triple.R == pytest.approx(R, abs=1e-12)
    np.testing.assert_allclose(triple.nu, nu, atol=1e-12)
    assert float(np.dot(triple.nu, triple.beta)) == pytest.approx(1.0)


def test_eigentriple_residuals(chain_service, birth_death_chain):
    triple = chain_service.eigentriple(birth_death_chain)
    p = birth_death_chain.entries
    assert np.abs(triple.nu @ p - triple.nu / triple.R).max() < 1e-10
    assert np.abs(p @ triple.beta - triple.beta / triple.R).max() < 1e-10
    assert triple.nu.sum() == pytest.approx(1.0)
    assert np.all(triple.nu > 0) and np.all(triple.beta > 0)
    assert float(np.dot(triple.nu, triple.beta)) == pytest.approx(1.0)


def test_eigentriple_reducible(chain_service):
    reducible = SubstochasticMatrix(entries=[[0.5, 0.2], [0.0, 0.5]])
    with pytest.raises(StructureError):
        chain_service.eigentriple(reducible)


def test_yaglom_limit_single_state(chain_service):
    mu, factor = chain_service.yaglom_limit(SubstochasticMatrix(entries=[[0.5]]), 0)
    np.testing.assert_allclose(mu, [1.0])
    assert factor == pytest.approx(0.5)


def test_yaglom_limit_independent_of_start(chain_service, birth_death_chain):
    triple = chain_service.eigentriple(birth_death_chain)
    tol = 1e-12
    limits = [chain_service.yaglom_limit(birth_death_chain, start, tol=tol) for start in range(20)]
    for mu, factor in limits:
        assert _tv(mu, triple.nu) < 1e-8
        assert factor == pytest.approx(1.0 / triple.R, abs=1e-8)
    first, last = limits[0][0], limits[18][0]
    assert _tv(first, last) < 1e-8


def test_yaglom_limit_bad_start(chain_service, birth_death_chain):
    with pytest.raises(ParameterError):
        chain_service.yaglom_limit(birth_death_chain, 20)


def test_exponential_absorption_under_nu(chain_service, birth_death_chain):
    triple = chain_service.eigentriple(birth_death_chain)
    for k in (1, 10, 100):
        assert chain_service.survival_from(birth_death_chain, triple.nu, k) == pytest.approx(
            triple.R ** (-k), rel=1e-9)


def test_dominated_initial_law_converges(chain_service, birth_death_chain):
    triple = chain_service.eigentriple(birth_death_chain)
    mu0 = triple.nu * np.linspace(0.5, 1.5, 20)
    mu0 /= mu0.sum()
    assert _tv(chain_service.conditioned_evolution(birth_death_chain, mu0, 3000), triple.nu) < 1e-8
