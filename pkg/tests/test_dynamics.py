from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agpsched.dynamics import (
    StateVector,
    apply_hamiltonian,
    evolve,
    ground_reference,
    relative_error,
)
from agpsched.errors import CapacityError, StepSizeError, UndefinedMeasureError, ValidationError
from agpsched.models import annni, driver_hamiltonian, generic, problem_hamiltonian, tfim
from agpsched.pauli import OperatorSum, PauliString, dense_matrix
from agpsched.scheduler import Schedule, geodesic_schedule, linear_schedule, tabulate_metric


def op(n, *terms):
    return OperatorSum([(PauliString.from_label(lab), c) for lab, c in terms], n_sites=n)


@dataclass(frozen=True)
class Frozen:
    """A schedule that never leaves lambda = 0."""

    T: float
    kind: str = "frozen"
    d_A: int | None = None

    def __call__(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))


def dense_rk4(model, schedule, n_steps):
    HP, HV = dense_matrix(problem_hamiltonian(model)), dense_matrix(driver_hamiltonian(model))
    dt = schedule.T / n_steps
    psi = np.full(2**model.n_sites, 2 ** (-model.n_sites / 2), dtype=complex)

    def f(t, v):
        lam = schedule(t)
        return -1j * (lam * HP + (1 - lam) * HV) @ v

    for s in range(n_steps):
        t = s * dt
        k1 = f(t, psi)
        k2 = f(t + dt / 2, psi + dt / 2 * k1)
        k3 = f(t + dt / 2, psi + dt / 2 * k2)
        k4 = f(t + dt, psi + dt * k3)
        psi = psi + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return psi


# -- Hamiltonian application ----------------------------------------------------


def test_z_signs():
    Z = op(1, ("Z", 1.0))
    np.testing.assert_array_equal(apply_hamiltonian(Z, StateVector.basis(1, 0)).amplitudes, [1, 0])
    np.testing.assert_array_equal(apply_hamiltonian(Z, StateVector.basis(1, 1)).amplitudes, [0, -1])


def test_site_zero_flip():
    out = apply_hamiltonian(op(2, ("XI", 1.0)), StateVector.basis(2, 0))
    np.testing.assert_array_equal(out.amplitudes, [0, 1, 0, 0])


def test_y_phase():
    out = apply_hamiltonian(op(1, ("Y", 1.0)), StateVector.basis(1, 0))
    np.testing.assert_array_equal(out.amplitudes, [0, 1j])


coef = st.complex_numbers(max_magnitude=2.0, allow_nan=False, allow_infinity=False)


@settings(max_examples=40)
@given(
    st.lists(st.tuples(st.text("IXYZ", min_size=3, max_size=3), coef), max_size=8),
    st.lists(st.floats(-1, 1), min_size=16, max_size=16),
)
def test_matches_dense_product(terms, parts):
    H = op(3, *terms)
    psi = np.array(parts[:8]) + 1j * np.array(parts[8:])
    out = apply_hamiltonian(H, StateVector(psi, 3)).amplitudes
    np.testing.assert_allclose(out, dense_matrix(H) @ psi, atol=1e-12)


def test_capacity():
    with pytest.raises(CapacityError):
        StateVector.plus(25)
    with pytest.raises(CapacityError):
        evolve(tfim(25), linear_schedule(1.0))


# -- reference states -----------------------------------------------------------


def test_ferromagnet_ground_space():
    E, V = ground_reference(tfim(4), 1.0)
    assert E == -4
    assert V.shape == (16, 2)
    assert set(np.flatnonzero(np.abs(V).sum(axis=1))) == {0b0000, 0b1111}


def test_annni_antiferro_ground_space_contains_pairs():
    E, V = ground_reference(annni(6, k=0.7), 1.0)
    up_up_down_down_up_up = 0b001100
    assert np.abs(V[up_up_down_down_up_up]).max() == 1.0
    assert E == pytest.approx(-3.4)


def test_driver_ground_state():
    E, V = ground_reference(tfim(5), 0.0)
    assert E == pytest.approx(-5)
    assert V.shape[1] == 1
    assert abs(np.vdot(V[:, 0], StateVector.plus(5).amplitudes)) == pytest.approx(1.0)


def test_interior_reference_matches_eigh():
    m = annni(4, k=0.3)
    E, V = ground_reference(m, 0.4)
    H = 0.4 * dense_matrix(problem_hamiltonian(m)) + 0.6 * dense_matrix(driver_hamiltonian(m))
    assert E == pytest.approx(np.linalg.eigvalsh(H)[0], abs=1e-12)
    np.testing.assert_allclose(H @ V, E * V, atol=1e-10)


def test_relative_error_of_plus_state():
    assert relative_error(StateVector.plus(4), tfim(4)) == pytest.approx(1.0, abs=1e-15)


def test_relative_error_undefined():
    with pytest.raises(UndefinedMeasureError):
        relative_error(StateVector.plus(2), generic(2))


# -- evolution --------------------------------------------------------------------


def test_frozen_schedule_is_stationary():
    r = evolve(tfim(4), Frozen(2.0), record_fidelity=True)
    np.testing.assert_allclose([f for _, f in r.fidelity_trace], 1.0, atol=1e-10)
    psi = r.state.amplitudes
    HV = dense_matrix(driver_hamiltonian(tfim(4)))
    assert np.vdot(psi, HV @ psi).real == pytest.approx(-4, abs=1e-10)


def test_norm_drift_order():
    # RK4 local error O(dt^5) accumulates to a global O(dt^4) drift, often near dt^5 for norm
    d1 = evolve(tfim(6), linear_schedule(2.0), 0.05, norm_tol=1.0).norm_drift
    d2 = evolve(tfim(6), linear_schedule(2.0), 0.025, norm_tol=1.0).norm_drift
    assert d1 / d2 >= 12


def test_default_dt_meets_norm_tolerance():
    r = evolve(tfim(6), linear_schedule(3.0))
    assert r.norm_drift < 1e-8
    assert r.dt <= 3.0 / 2000


@pytest.mark.parametrize("matrix_free", [True, False])
def test_agrees_with_dense_integration(matrix_free):
    m = annni(4, k=0.7)
    s = geodesic_schedule(tabulate_metric(m, 51, 2), 1.5)
    r = evolve(m, s, 1.5 / 600, matrix_free=matrix_free)
    ref = dense_rk4(m, s, 600)
    np.testing.assert_allclose(r.state.amplitudes, ref, atol=1e-12)
    assert abs(np.vdot(ref, r.state.amplitudes)) ** 2 > 1 - 1e-8


def test_csv_schedule_reproduces_run(tmp_path):
    m = tfim(6)
    s = geodesic_schedule(tabulate_metric(m, 101, 2), 2.0)
    s.to_csv(tmp_path / "s.csv")
    a = evolve(m, s)
    b = evolve(m, Schedule.from_csv(tmp_path / "s.csv"))
    assert abs(a.relative_error - b.relative_error) < 1e-10


def test_explicit_dt_failure_is_step_size_error():
    with pytest.raises(StepSizeError, match="smaller dt"):
        evolve(tfim(6), linear_schedule(2.0), 0.1)


def test_auto_dt_halves_until_accurate():
    r = evolve(tfim(6), linear_schedule(40.0))
    assert r.dt < 1e-2
    assert r.norm_drift < 1e-8


def test_dt_must_divide_T():
    with pytest.raises(ValidationError):
        evolve(tfim(3), linear_schedule(1.0), 0.3)
    with pytest.raises(ValidationError):
        evolve(tfim(3), linear_schedule(1.0), -0.1)


@pytest.mark.parametrize("mode", ["subspace", "vector"])
def test_fidelity_trace(mode):
    r = evolve(annni(6, k=0.7), linear_schedule(1.0), record_fidelity=True, fidelity_mode=mode)
    t, f = np.array(r.fidelity_trace).T
    assert len(t) == 200
    assert t[0] == 0 and t[-1] == 1.0
    assert np.all(np.diff(t) > 0)
    assert np.all((f >= 0) & (f <= 1 + 1e-10))
    assert f[0] == pytest.approx(1.0, abs=1e-12)
    assert r.final_fidelity == f[-1]


def test_subspace_fidelity_dominates_vector():
    m, s = annni(6, k=0.7), linear_schedule(1.75)
    sub = evolve(m, s, record_fidelity=True, fidelity_mode="subspace")
    vec = evolve(m, s, record_fidelity=True, fidelity_mode="vector")
    assert np.all(np.array(sub.fidelity_trace)[:, 1] >= np.array(vec.fidelity_trace)[:, 1] - 1e-12)


def test_unknown_fidelity_mode():
    with pytest.raises(ValidationError):
        evolve(tfim(3), linear_schedule(1.0), fidelity_mode="both")


def test_adiabatic_limit():
    r = evolve(tfim(10), linear_schedule(100.0))
    assert r.relative_error < 1e-3


def test_summary_record():
    r = evolve(tfim(4), linear_schedule(1.0))
    rec = r.summary()
    assert list(rec) == ["schedule_kind", "d_A", "T", "dt", "relative_error", "final_fidelity", "norm_drift"]
    assert rec["schedule_kind"] == "linear"
    assert r.relative_error == pytest.approx(abs(r.energy_expectation - r.E_g) / abs(r.E_g))
