"""Krylov construction of the approximate adiabatic gauge potential.

Starting from the seed ``dH = dH/dlambda`` the operator Lanczos recurrence

    b_0 O_0 = dH,   b_1 O_1 = [H, O_0],
    b_i O_i = [H, O_{i-1}] - b_{i-1} O_{i-2}

generates orthonormal operators (rescaled Hilbert-Schmidt norm).  The
ansatz ``A = i sum_k alpha_k O_{2k-1}`` minimises ``||dH - i[H, A]||^2``
when alpha solves a symmetric tridiagonal system whose entries are built
from the b's; the nonadiabaticity metric is ``g* = sum_k alpha_k**2``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, IllConditionedAGPWarning, NumericalError, ValidationError
from .pauli import OperatorSum, _pair_chunks, commutator, total

ZERO_TOL = 1e-8
REORTH_DEPTH = 30
MAX_DEPTH = 20_000
GAP_TOL = 1e-10


@dataclass(frozen=True)
class LanczosBasis:
    """Krylov operators ``O_0 .. O_m`` and their normalisations.

    ``b`` holds ``b_0 .. b_m`` and, when the recurrence terminated, the
    final value ``b_{m+1}`` as its last entry: the sub-threshold norm, or
    an exact 0.0 when the exact Krylov dimension was reached.  In the
    latter case ``residual`` keeps the floating-point norm of the discarded
    remainder, which is amplified rounding noise.
    """

    lam: float
    operators: tuple[OperatorSum, ...]
    b: tuple[float, ...]
    terminated: bool
    threshold: float = 0.0
    residual: float = 0.0

    @property
    def depth(self) -> int:
        """Index of the last stored operator."""
        return len(self.operators) - 1

    @property
    def n_odd(self) -> int:
        return len(self.operators) // 2

    @property
    def termination_index(self) -> int | None:
        return len(self.b) - 1 if self.terminated else None

    def effective_b(self) -> np.ndarray:
        """b values with the terminating one replaced by an exact zero."""
        b = np.array(self.b, dtype=float)
        if self.terminated:
            b[-1] = 0.0
        return b


@dataclass(frozen=True)
class AgpSolution:
    alpha: np.ndarray
    g_star: float
    d_A: int
    lam: float
    d_effective: int = 0
    basis: LanczosBasis | None = field(default=None, repr=False, compare=False)

    def operator(self) -> OperatorSum:
        """``i sum_k alpha_k O_{2k-1}`` assembled from the stored basis."""
        if self.basis is None:
            raise ValidationError("solution was built without a basis")
        ops = self.basis.operators
        n = ops[0].n_sites
        parts = [(1j * a) * ops[2 * k + 1] for k, a in enumerate(self.alpha) if a != 0.0 and 2 * k + 1 < len(ops)]
        return total(parts, n)


def lanczos_expand(
    H: OperatorSum,
    dH: OperatorSum,
    max_basis: int | None,
    zero_tol: float = ZERO_TOL,
    reorthogonalize: bool | None = None,
    lam: float = float("nan"),
    symmetrize: bool = True,
    exact_termination: bool = True,
) -> LanczosBasis:
    """Run the operator Lanczos recurrence up to ``O_{max_basis}``.

    ``max_basis=None`` runs until the recurrence terminates.  A step
    terminates the recurrence when its ``b_i`` falls below ``zero_tol * b_0``
    or, with ``exact_termination``, when ``i`` reaches the exact Krylov
    dimension (see :func:`krylov_dimension`).

    Rounding noise in floating point breaks the lattice symmetries of H and
    leaks into degenerate eigenspaces of the Liouvillian, where the
    recurrence amplifies it into spurious directions.  ``symmetrize``
    projects every new operator onto the subspace invariant under the site
    permutations that leave both H and dH unchanged, and the exact
    dimension stops the chain where exact arithmetic would.  With
    ``reorthogonalize=None`` full reorthogonalisation is switched on when
    the requested depth exceeds 30.
    """
    if H.n_sites != dH.n_sites:
        raise ValidationError("H and dH act on different numbers of sites")
    if max_basis is not None and max_basis < 1:
        raise ValidationError(f"max_basis must be >= 1, got {max_basis}")
    if not H.is_hermitian(1e-10 * max(1.0, H.norm())):
        raise ValidationError("H is not Hermitian")
    if not dH.is_hermitian(1e-10 * max(1.0, dH.norm())):
        raise ValidationError("dH is not Hermitian")
    b0 = dH.norm()
    if b0 == 0.0:
        raise DegenerateInputError("dH vanishes identically: no direction of change")
    limit = MAX_DEPTH if max_basis is None else max_basis
    if reorthogonalize is None:
        reorthogonalize = limit > REORTH_DEPTH
    threshold = zero_tol * b0
    exact_dim = krylov_dimension(H, dH, limit + 1) if exact_termination else None
    group = invariant_permutations(H, dH) if symmetrize else []
    project = (lambda o: symmetrize_operator(o, group)) if len(group) > 1 else (lambda o: o)

    ops = [dH / b0]
    b = [b0]
    store = _DenseStore(ops[0]) if reorthogonalize else None
    terminated = False
    residual = 0.0
    for i in range(1, limit + 1):
        w = commutator(H, ops[i - 1])
        if i >= 2:
            w = w - b[i - 1] * ops[i - 2]
        w = project(w)
        if store is not None:
            w = store.orthogonalize(w)
        bi = w.norm()
        if i == exact_dim:
            residual = bi
            bi = 0.0
        b.append(bi)
        if bi < threshold:
            terminated = True
            break
        ops.append(w / bi)
        if store is not None:
            store.append(ops[-1])
    else:
        if max_basis is None:
            raise NumericalError(f"Lanczos recurrence did not terminate within {MAX_DEPTH} steps")
    return LanczosBasis(float(lam), tuple(ops), tuple(b), terminated, threshold, residual)


def invariant_permutations(*ops: OperatorSum, atol: float = 1e-12) -> list[tuple[int, ...]]:
    """Ring translations and reflections of the sites that leave every operator unchanged."""
    n = ops[0].n_sites
    candidates = sorted({tuple((s * i + t) % n for i in range(n)) for s in (1, -1) for t in range(n)})
    return [
        g for g in candidates
        if all(o.permute_sites(g).allclose(o, atol * max(1.0, o.norm())) for o in ops)
    ]


def symmetrize_operator(op: OperatorSum, group) -> OperatorSum:
    """Average of ``op`` over a group of site permutations."""
    return op.symmetrized(group)


_PRIMES = (2147483647, 2147483629, 2147483587)


def _mod_coeffs(values, p: int) -> np.ndarray:
    out = []
    for v in values:
        num, den = float(v).as_integer_ratio()
        out.append(num % p * pow(den, -1, p) % p)
    return np.array(out, dtype=np.int64)


def _collect_mod(x, z, c, p):
    if len(c) == 0:
        return x, z, c
    keys = np.ascontiguousarray(np.concatenate([x, z], axis=1))
    view = keys.view(np.dtype((np.void, keys.shape[1] * 8))).ravel()
    _, first, inv = np.unique(view, return_index=True, return_inverse=True)
    # sums stay below 2**53, so float bincount is exact
    summed = np.bincount(inv.ravel(), weights=c.astype(float), minlength=len(first))
    coef = summed.astype(np.int64) % p
    keep = coef != 0
    return x[first[keep]], z[first[keep]], coef[keep]


def _krylov_dimension_mod(H: OperatorSum, dH: OperatorSum, limit: int, p: int) -> int | None:
    hx, hz = H._x, H._z
    hc = _mod_coeffs(H.coefficients.real, p)
    prev = None
    cur = (dH._x, dH._z, _mod_coeffs(dH.coefficients.real, p))
    norms = [int(np.sum(cur[2] * cur[2] % p) % p)]
    for i in range(1, limit + 1):
        xs, zs, cs = [], [], []
        if len(cur[2]):
            for lo, px, pz, e, anti in _pair_chunks(hx, hz, cur[0], cur[1], commutator=True):
                sign = np.where(e % 4 == 1, 2, p - 2)
                coef = hc[lo:lo + px.shape[0], None] * cur[2][None, :] % p * sign % p
                xs.append(px[anti])
                zs.append(pz[anti])
                cs.append(coef[anti])
        if i >= 2:
            if norms[i - 2] == 0:
                raise ZeroDivisionError
            beta = norms[i - 1] * pow(norms[i - 2], -1, p) % p
            xs.append(prev[0])
            zs.append(prev[1])
            cs.append(prev[2] * beta % p)
        if not cs:
            return i
        nxt = _collect_mod(np.concatenate(xs), np.concatenate(zs), np.concatenate(cs), p)
        if len(nxt[2]) == 0:
            return i
        prev, cur = cur, nxt
        norms.append(int(np.sum(cur[2] * cur[2] % p) % p))
    return None


def krylov_dimension(H: OperatorSum, dH: OperatorSum, limit: int = MAX_DEPTH) -> int | None:
    """Exact ``dim span{L^k dH}``, or ``None`` if it exceeds ``limit``.

    Runs the monic form of the recurrence, ``q_i = L q_{i-1} + beta q_{i-2}``
    with real coefficients and the powers of i factored out, in modular
    arithmetic on the exact rational values of the float coefficients.  The
    first vanishing ``q_K`` gives ``b_K = 0``.  A prime for which some norm
    vanishes by accident is swapped for the next one.
    """
    for p in _PRIMES:
        try:
            return _krylov_dimension_mod(H, dH, limit, p)
        except ZeroDivisionError:
            continue
    raise NumericalError("exact Krylov dimension failed for every prime")


class _DenseStore:
    """Stored Krylov operators as dense rows over a shared, growing string index.

    Turns full reorthogonalisation into two matrix-vector products.
    """

    def __init__(self, first: OperatorSum):
        self.n_sites = first.n_sites
        self.words = np.concatenate([first._x, first._z], axis=1)
        self.keys = first._key_view().copy()
        self.rows = first.coefficients[None, :]

    def _align(self, op: OperatorSum) -> np.ndarray:
        keys = op._key_view()
        pos = np.searchsorted(self.keys, keys)
        pos_c = np.minimum(pos, len(self.keys) - 1)
        new = self.keys[pos_c] != keys
        if np.any(new):
            words = np.concatenate([self.words, np.concatenate([op._x, op._z], axis=1)[new]])
            allkeys = np.concatenate([self.keys, keys[new]])
            order = np.argsort(allkeys, kind="stable")
            self.keys = allkeys[order]
            self.words = words[order]
            rows = np.zeros((self.rows.shape[0], len(self.keys)), dtype=complex)
            rows[:, np.argsort(order)[: self.rows.shape[1]]] = self.rows
            self.rows = rows
            pos = np.searchsorted(self.keys, keys)
        v = np.zeros(len(self.keys), dtype=complex)
        v[pos] = op.coefficients
        return v

    def _to_op(self, v: np.ndarray) -> OperatorSum:
        nw = self.words.shape[1] // 2
        return OperatorSum._from_arrays(self.n_sites, self.words[:, :nw], self.words[:, nw:], v)

    def orthogonalize(self, op: OperatorSum) -> OperatorSum:
        v = self._align(op)
        for _ in range(2):
            v = v - self.rows.T @ (self.rows.conj() @ v)
        return self._to_op(v)

    def append(self, op: OperatorSum):
        v = self._align(op)
        self.rows = np.vstack([self.rows, v[None, :]])


def thomas_solve(lower, diag, upper, rhs) -> np.ndarray:
    """Solve a tridiagonal system by forward elimination and back substitution.

    ``lower[i]`` couples row ``i + 1`` to column ``i`` and ``upper[i]`` couples
    row ``i`` to column ``i + 1``.  Raises ``ZeroDivisionError`` on a zero pivot.
    """
    n = len(diag)
    c = np.zeros(n)
    d = np.zeros(n)
    piv = diag[0]
    if piv == 0.0:
        raise ZeroDivisionError("zero pivot in row 0")
    c[0] = upper[0] / piv if n > 1 else 0.0
    d[0] = rhs[0] / piv
    for i in range(1, n):
        piv = diag[i] - lower[i - 1] * c[i - 1]
        if piv == 0.0:
            raise ZeroDivisionError(f"zero pivot in row {i}")
        c[i] = upper[i] / piv if i < n - 1 else 0.0
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / piv
    x = np.zeros(n)
    x[-1] = d[-1]
    for i in range(n - 2, -1, -1):
        x[i] = d[i] - c[i] * x[i + 1]
    return x


def alpha_system(b, d_A: int):
    """Tridiagonal system for ``alpha_1 .. alpha_{d_A}`` from ``b_0 .. b_{2 d_A}``.

    Returns ``(diag, off, rhs)``.  Missing trailing b values count as zero.
    """
    bb = np.zeros(2 * d_A + 2)
    vals = np.asarray(b, dtype=float)[: 2 * d_A + 1]
    bb[: len(vals)] = vals
    k = np.arange(1, d_A + 1)
    diag = bb[2 * k - 1] ** 2 + bb[2 * k] ** 2
    off = bb[2 * k[:-1]] * bb[2 * k[:-1] + 1]
    rhs = np.zeros(d_A)
    rhs[0] = -bb[0] * bb[1]
    return diag, off, rhs


def solve_alpha(basis: LanczosBasis, d_A: int | None = None) -> AgpSolution:
    """Variational coefficients of the truncated Krylov AGP.

    ``d_A=None`` uses every odd operator the basis holds.  When the basis is
    shorter than requested (early termination), only the available odd
    operators enter and the remaining alphas are zero.
    """
    available = basis.n_odd if basis.terminated else (len(basis.b) - 1) // 2
    if d_A is None:
        d_A = available
    elif d_A < 1:
        raise ValidationError(f"d_A must be >= 1, got {d_A}")
    d_eff = min(d_A, available)
    alpha = np.zeros(max(d_A, 0))
    if d_eff == 0:
        return AgpSolution(alpha, 0.0, d_A, basis.lam, 0, basis)
    diag, off, rhs = alpha_system(basis.effective_b(), d_eff)
    if not np.any(diag):
        return AgpSolution(alpha, 0.0, d_A, basis.lam, 0, basis)
    try:
        sol = thomas_solve(off, diag, off, rhs)
    except ZeroDivisionError:
        return AgpSolution(alpha, 0.0, d_A, basis.lam, 0, basis)
    alpha[:d_eff] = sol
    return AgpSolution(alpha, float(np.sum(alpha**2)), d_A, basis.lam, d_eff, basis)


def metric_at(
    H: OperatorSum,
    dH: OperatorSum,
    d_A: int | None,
    zero_tol: float = ZERO_TOL,
    reorthogonalize: bool | None = None,
    lam: float = float("nan"),
) -> AgpSolution:
    """``g*`` at one parameter value; ``d_A=None`` means the full basis."""
    if d_A is not None and d_A < 1:
        raise ValidationError(f"d_A must be >= 1, got {d_A}")
    if len(dH) == 0:
        return AgpSolution(np.zeros(d_A or 0), 0.0, d_A or 0, lam, 0, None)
    depth = None if d_A is None else 2 * d_A
    basis = lanczos_expand(H, dH, depth, zero_tol, reorthogonalize, lam)
    return solve_alpha(basis, d_A)


def exact_agp_oracle(H_dense: np.ndarray, dH_dense: np.ndarray, gap_tol: float = GAP_TOL) -> np.ndarray:
    """Spectral gauge potential ``i sum_{n != m} |n><n|dH|m><m| / (E_m - E_n)``.

    Matrix elements between levels closer than ``gap_tol`` are set to zero;
    a nonzero drive on such a pair raises :class:`IllConditionedAGPWarning`.
    """
    H_dense = np.asarray(H_dense)
    E, V = np.linalg.eigh(H_dense)
    dH_eig = V.conj().T @ np.asarray(dH_dense) @ V
    gaps = E[None, :] - E[:, None]
    close = np.abs(gaps) < gap_tol
    scale = max(1.0, float(np.max(np.abs(dH_eig)))) if dH_eig.size else 1.0
    offending = close & ~np.eye(len(E), dtype=bool) & (np.abs(dH_eig) > 1e-8 * scale)
    if np.any(offending):
        n, m = map(int, np.argwhere(offending)[0])
        warnings.warn(
            IllConditionedAGPWarning(
                f"levels {n} and {m} are degenerate within {gap_tol:g} but coupled by dH "
                f"(|<n|dH|m>| = {abs(dH_eig[n, m]):.3g}); element dropped",
                pair=(n, m),
            ),
            stacklevel=2,
        )
    safe = np.where(close, 1.0, gaps)
    A_eig = np.where(close, 0.0, 1j * dH_eig / safe)
    return V @ A_eig @ V.conj().T
