"""State-vector simulation of the annealing sweep.

The state evolves under ``i d/dt psi = H(lambda(t)) psi`` (hbar = 1) from
``|+...+>``, integrated with fixed-step classical RK4.  Hamiltonians act
matrix-free: terms are grouped by their X mask, and each group is one
bit-flip permutation of the amplitudes times a diagonal phase vector.

Bit ordering: site ``i`` is bit ``i`` of the basis-state index, so site 0
is the least significant bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, eigsh

from .errors import CapacityError, StepSizeError, UndefinedMeasureError, ValidationError
from .models import AnnealingModel, driver_hamiltonian, problem_hamiltonian
from .pauli import OperatorSum, dense_matrix
from .scheduler import Schedule

SIM_LIMIT = 24
DENSE_LIMIT = 12
EIGH_LIMIT = 10
NORM_TOL = 1e-8
N_SAMPLES = 200
MAX_HALVINGS = 5
SPARSE_BUDGET = 1 << 22  # stored nonzeros below which evolve assembles CSR
FIDELITY_MODES = ("subspace", "vector")


@dataclass
class StateVector:
    amplitudes: np.ndarray
    n_sites: int

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (1 << self.n_sites,):
            raise ValidationError(f"expected {1 << self.n_sites} amplitudes, got shape {self.amplitudes.shape}")

    @classmethod
    def plus(cls, n_sites: int) -> "StateVector":
        _check_capacity(n_sites)
        dim = 1 << n_sites
        return cls(np.full(dim, 1 / math.sqrt(dim), dtype=complex), n_sites)

    @classmethod
    def basis(cls, n_sites: int, index: int) -> "StateVector":
        _check_capacity(n_sites)
        amp = np.zeros(1 << n_sites, dtype=complex)
        amp[index] = 1.0
        return cls(amp, n_sites)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


def _check_capacity(n_sites, limit=SIM_LIMIT):
    if n_sites > limit:
        raise CapacityError(f"{n_sites} sites exceeds the simulation limit of {limit}")


def _flip(psi: np.ndarray, x: int, n: int) -> np.ndarray:
    """``out[t] = psi[t ^ x]`` as a view over the site tensor."""
    axes = tuple(n - 1 - i for i in range(n) if x >> i & 1)
    return np.flip(psi.reshape((2,) * n), axis=axes).reshape(-1)


class CompiledOperator:
    """Matrix-free ``OperatorSum`` acting on amplitude vectors.

    ``(P psi)[t] = c * i^y * (-1)^{|z & (t ^ x)|} * psi[t ^ x]`` for a string
    with masks ``(x, z)``; ``y = |x & z|`` counts its Y factors.
    """

    def __init__(self, op: OperatorSum):
        n = op.n_sites
        _check_capacity(n)
        self.n_sites = n
        x, z = op.masks()
        c = op.coefficients
        idx = None
        self.groups: list[tuple[int, complex | np.ndarray]] = []
        for xm in np.unique(x):
            sel = x == xm
            zs, cs = z[sel], c[sel] * (1j ** np.bitwise_count(xm & z[sel]).astype(int))
            if np.all(zs == 0):
                self.groups.append((int(xm), complex(cs.sum())))
                continue
            if idx is None:
                idx = np.arange(1 << n, dtype=np.int64)
            src = idx ^ xm
            diag = np.zeros(1 << n, dtype=complex)
            for zm, cm in zip(zs, cs):
                diag += cm * (1.0 - 2.0 * (np.bitwise_count(src & zm) & 1))
            if np.all(diag.imag == 0):
                diag = diag.real.copy()
            self.groups.append((int(xm), diag))

    def __call__(self, psi: np.ndarray) -> np.ndarray:
        out = np.zeros_like(psi, dtype=complex)
        for xm, d in self.groups:
            src = psi if xm == 0 else _flip(psi, xm, self.n_sites)
            out += d * src
        return out

    def to_sparse(self) -> sparse.csr_matrix:
        """The same action as a CSR matrix, assembled from the X-mask groups."""
        dim = 1 << self.n_sites
        rows = np.arange(dim)
        parts = [
            sparse.csr_matrix((np.broadcast_to(d, (dim,)), (rows, rows ^ xm)), shape=(dim, dim))
            for xm, d in self.groups
        ]
        return sum(parts, sparse.csr_matrix((dim, dim), dtype=complex)).tocsr()


def apply_hamiltonian(H: OperatorSum, psi: StateVector) -> StateVector:
    """``H |psi>`` without forming a matrix."""
    if H.n_sites != psi.n_sites:
        raise ValidationError(f"operator has {H.n_sites} sites but state has {psi.n_sites}")
    return StateVector(CompiledOperator(H)(psi.amplitudes), psi.n_sites)


# -- reference spectra -------------------------------------------------------


class _Reference:
    """Ground energy and ground space of ``H(lambda)`` with cached parts."""

    def __init__(self, model: AnnealingModel):
        self.n = model.n_sites
        self.hp = problem_hamiltonian(model)
        self.hv = driver_hamiltonian(model)
        self._dense = None
        self._ops = None

    def _diag_scan(self):
        x, _ = self.hp.masks()
        if np.any(x != 0) or np.any(self.hp.coefficients.imag != 0):
            return None
        diag = CompiledOperator(self.hp)(np.ones(1 << self.n, dtype=complex)).real
        e0 = diag.min()
        tol = 1e-9 * max(abs(diag.min()), abs(diag.max()), 1e-300)
        where = np.flatnonzero(diag - e0 <= tol)
        vecs = np.zeros((1 << self.n, len(where)), dtype=complex)
        vecs[where, np.arange(len(where))] = 1.0
        return float(e0), vecs

    def __call__(self, lam: float):
        if lam == 1.0:
            _check_capacity(self.n)
            scan = self._diag_scan()
            if scan is not None:
                return scan
        if self.n > DENSE_LIMIT:
            raise CapacityError(f"ground state at interior lambda needs n_sites <= {DENSE_LIMIT}, got {self.n}")
        if self.n <= EIGH_LIMIT:
            if self._dense is None:
                self._dense = (dense_matrix(self.hp), dense_matrix(self.hv))
            hp, hv = self._dense
            w, v = np.linalg.eigh(lam * hp + (1 - lam) * hv)
            tol = 1e-9 * max(abs(w[0]), abs(w[-1]))
            k = int(np.count_nonzero(w - w[0] <= tol))
            return float(w[0]), v[:, :k]
        if self._ops is None:
            self._ops = (CompiledOperator(self.hp), CompiledOperator(self.hv))
        hp, hv = self._ops
        dim = 1 << self.n
        op = LinearOperator((dim, dim), matvec=lambda v: lam * hp(v) + (1 - lam) * hv(v), dtype=complex)
        norm = abs(eigsh(op, k=1, which="LM", return_eigenvectors=False)[0])
        k = 6
        while True:
            w, v = eigsh(op, k=k, which="SA", tol=1e-12)
            order = np.argsort(w)
            w, v = w[order], v[:, order]
            deg = int(np.count_nonzero(w - w[0] <= 1e-9 * norm))
            if deg < k or k >= dim - 2:
                return float(w[0]), v[:, :deg]
            k = min(2 * k, dim - 2)


def ground_reference(model: AnnealingModel, lam: float):
    """Lowest eigenvalue of ``H(lam)`` and an orthonormal basis of its eigenspace.

    Levels within ``1e-9 * ||H||`` of the minimum count as degenerate.
    Returns ``(E_g, V)`` with ``V`` of shape ``(2**n, k)``.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValidationError(f"lambda must lie in [0, 1], got {lam}")
    return _Reference(model)(float(lam))


def relative_error(psi: StateVector, model: AnnealingModel, E_g: float | None = None) -> float:
    """``|<H_P> - E_g| / |E_g|`` with ``E_g`` the ground energy of ``H_P``."""
    hp = problem_hamiltonian(model)
    if E_g is None:
        E_g = _Reference(model)(1.0)[0]
    if E_g == 0:
        raise UndefinedMeasureError("relative error is undefined for a problem with zero ground energy")
    energy = float(np.vdot(psi.amplitudes, CompiledOperator(hp)(psi.amplitudes)).real)
    return abs(energy - E_g) / abs(E_g)


def _fidelity(amp, vecs, mode, prev):
    """Return (fidelity, reference vector) under the given mode."""
    proj = vecs.conj().T @ amp
    if mode == "subspace":
        return float(np.sum(np.abs(proj) ** 2)), None
    # single vector: inside a degenerate space follow the previous reference
    if vecs.shape[1] == 1 or prev is None:
        ref = vecs[:, 0]
    else:
        ref = vecs @ (vecs.conj().T @ prev)
        nrm = np.linalg.norm(ref)
        ref = ref / nrm if nrm > 1e-8 else vecs[:, 0]
    return float(abs(np.vdot(ref, amp)) ** 2), ref


# -- evolution ---------------------------------------------------------------


@dataclass
class RunResult:
    relative_error: float
    fidelity_trace: list[tuple[float, float]]
    energy_expectation: float
    schedule_kind: str
    T: float
    dt: float
    E_g: float
    norm_drift: float
    final_fidelity: float
    fidelity_mode: str
    d_A: int | None = None
    state: StateVector | None = field(default=None, repr=False)

    def summary(self) -> dict:
        return {
            "schedule_kind": self.schedule_kind,
            "d_A": "full" if self.d_A is None and self.schedule_kind == "geodesic" else self.d_A,
            "T": self.T,
            "dt": self.dt,
            "relative_error": self.relative_error,
            "final_fidelity": self.final_fidelity,
            "norm_drift": self.norm_drift,
        }


def default_dt(T: float) -> float:
    return min(1e-2, T / 2000)


def _steps(T, dt):
    n = round(T / dt)
    if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValidationError(f"dt={dt} does not divide T={T}")
    return n


def _fast_apply(c: CompiledOperator):
    if len(c.groups) == 1 and c.groups[0][0] == 0:
        d = c.groups[0][1]
        return lambda v: d * v
    return c.to_sparse().dot


def _integrate(hp, hv, n, schedule, n_steps, norm_tol, sample_steps, on_sample, early_abort=False):
    """Run RK4; returns (psi, drift) or (None, drift) if drift exceeds norm_tol.

    With ``early_abort`` a run is also abandoned once a tenth of the steps
    are done and the drift, extrapolated linearly to the end, exceeds four
    times the tolerance.
    """
    T = schedule.T
    dt = T / n_steps
    lam = np.asarray(schedule(np.arange(2 * n_steps + 1) * (dt / 2)), dtype=float)
    psi = np.full(1 << n, 2 ** (-n / 2), dtype=complex)
    samples = set(sample_steps)

    def rhs(l, v):
        return -1j * (l * hp(v) + (1 - l) * hv(v))

    if 0 in samples:
        on_sample(0, 0.0, float(lam[0]), psi)
    for s in range(n_steps):
        l0, lh, l1 = lam[2 * s], lam[2 * s + 1], lam[2 * s + 2]
        k1 = rhs(l0, psi)
        k2 = rhs(lh, psi + (dt / 2) * k1)
        k3 = rhs(lh, psi + (dt / 2) * k2)
        k4 = rhs(l1, psi + dt * k3)
        psi = psi + (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        if s % 32 == 31 or s == n_steps - 1:
            drift = abs(np.linalg.norm(psi) - 1.0)
            if drift > norm_tol:
                return None, drift
            if early_abort and 10 * (s + 1) >= n_steps and drift * n_steps / (s + 1) > 4 * norm_tol:
                return None, drift
        if s + 1 in samples:
            on_sample(s + 1, (s + 1) * dt if s + 1 < n_steps else T, float(l1), psi)
    return psi, abs(np.linalg.norm(psi) - 1.0)


def evolve(
    model: AnnealingModel,
    schedule: Schedule,
    dt: float | None = None,
    record_fidelity: bool = False,
    *,
    fidelity_mode: str = "subspace",
    norm_tol: float = NORM_TOL,
    n_samples: int = N_SAMPLES,
    matrix_free: bool | None = None,
) -> RunResult:
    """Integrate the Schrodinger equation along ``schedule`` from ``|+...+>``.

    ``dt=None`` picks ``min(1e-2, T/2000)`` (rounded to divide ``T``) and
    halves it on norm-drift failure up to five times; an explicit ``dt``
    that drifts raises :class:`StepSizeError` instead.  With
    ``record_fidelity`` the ground-state fidelity is sampled at
    ``n_samples`` uniformly spaced times.  ``matrix_free=None`` assembles
    the Hamiltonian parts as CSR matrices when that stays small, which is
    faster for short vectors; ``True`` forces the bit-flip kernels.
    """
    if fidelity_mode not in FIDELITY_MODES:
        raise ValidationError(f"fidelity_mode must be one of {FIDELITY_MODES}, got {fidelity_mode!r}")
    _check_capacity(model.n_sites)
    T = schedule.T
    if dt is None:
        n_steps = math.ceil(T / default_dt(T) - 1e-9)
        retries = MAX_HALVINGS
    else:
        if not dt > 0:
            raise ValidationError(f"dt must be positive, got {dt}")
        n_steps = _steps(T, dt)
        retries = 0

    hp = CompiledOperator(problem_hamiltonian(model))
    hv = CompiledOperator(driver_hamiltonian(model))
    reference = _Reference(model)
    apply_p, apply_v = hp, hv
    nnz = (len(hp.groups) + len(hv.groups)) << model.n_sites
    if matrix_free is False or (matrix_free is None and nnz <= SPARSE_BUDGET):
        apply_p, apply_v = (_fast_apply(c) for c in (hp, hv))

    while True:
        trace: list[tuple[float, float]] = []
        state = {"prev": None}

        def on_sample(step, t, lam, psi):
            e, vecs = reference(lam)
            f, state["prev"] = _fidelity(psi / np.linalg.norm(psi), vecs, fidelity_mode, state["prev"])
            trace.append((t, f))

        sample_steps = np.unique(np.rint(np.linspace(0, n_steps, n_samples)).astype(int)) if record_fidelity else []
        psi, drift = _integrate(apply_p, apply_v, model.n_sites, schedule, n_steps, norm_tol, sample_steps, on_sample, retries > 0)
        if psi is not None:
            break
        if retries == 0:
            raise StepSizeError(
                f"norm drift {drift:.3g} exceeds {norm_tol:.3g} at dt={T / n_steps:.6g}; use a smaller dt"
            )
        retries -= 1
        n_steps *= 2

    E_g, ground = reference(1.0)
    if E_g == 0:
        raise UndefinedMeasureError("relative error is undefined for a problem with zero ground energy")
    energy = float(np.vdot(psi, hp(psi)).real)
    if record_fidelity:
        final_fid = trace[-1][1]
    else:
        final_fid = _fidelity(psi / np.linalg.norm(psi), ground, "subspace", None)[0]
    return RunResult(
        relative_error=abs(energy - E_g) / abs(E_g),
        fidelity_trace=trace,
        energy_expectation=energy,
        schedule_kind=schedule.kind,
        T=T,
        dt=T / n_steps,
        E_g=E_g,
        norm_drift=drift,
        final_fidelity=final_fid,
        fidelity_mode=fidelity_mode if record_fidelity else "subspace",
        d_A=schedule.d_A,
        state=StateVector(psi, model.n_sites),
    )
