"""Pauli-string operator algebra on bitmasks.

A string on ``n`` sites is stored as two bitsets ``x_mask`` and ``z_mask``.
Site ``i`` carries I, X, Y, Z for ``(x_i, z_i)`` equal to (0,0), (1,0),
(1,1), (0,1).  The string denotes the literal tensor product of those
Hermitian Pauli matrices, so Y is Y (not XZ) and an operator sum is
Hermitian exactly when all of its coefficients are real.  Multiplication
is an XOR of the masks plus a phase i**e with

    e = y(a) + y(b) - y(ab) + 2 |z_a & x_b|   (mod 4),

where y(.) counts the Y factors of a string.

Inside :class:`OperatorSum` the masks are held as ``(n_terms, n_words)``
arrays of uint64 words, so any number of sites is supported; all
products and commutators are vectorised over term pairs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import CapacityError, DimensionError, ValidationError

PRUNE_TOL = 1e-14
DENSE_LIMIT = 12

_WORD_BITS = 64
_WORD_MASK = (1 << _WORD_BITS) - 1
_I_POW = np.array([1, 1j, -1, -1j], dtype=complex)
_PAIR_CHUNK = 1 << 20

_LETTER_BITS = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}
_BITS_LETTER = {v: k for k, v in _LETTER_BITS.items()}


def _n_words(n_sites: int) -> int:
    return max(1, -(-n_sites // _WORD_BITS))


def _int_to_words(mask: int, n_words: int) -> np.ndarray:
    return np.array(
        [(mask >> (_WORD_BITS * k)) & _WORD_MASK for k in range(n_words)],
        dtype=np.uint64,
    )


def _words_to_int(words) -> int:
    out = 0
    for k, w in enumerate(words):
        out |= int(w) << (_WORD_BITS * k)
    return out


def _popcount(a: np.ndarray) -> np.ndarray:
    """Population count summed over the trailing word axis, as int64."""
    return np.bitwise_count(a).sum(axis=-1, dtype=np.int64)


@dataclass(frozen=True, order=True)
class PauliString:
    """A tensor product of single-site Pauli matrices.

    Bit ``i`` of ``x_mask`` is set when site ``i`` carries X or Y, bit ``i``
    of ``z_mask`` when it carries Z or Y.
    """

    x_mask: int
    z_mask: int
    n_sites: int

    def __post_init__(self):
        if self.n_sites < 1:
            raise ValidationError(f"n_sites must be positive, got {self.n_sites}")
        if self.x_mask < 0 or self.z_mask < 0:
            raise ValidationError("masks must be nonnegative")
        if (self.x_mask | self.z_mask) >> self.n_sites:
            raise ValidationError(
                f"mask bits beyond n_sites={self.n_sites} in {self.x_mask:#x}/{self.z_mask:#x}"
            )

    @classmethod
    def from_label(cls, label: str) -> "PauliString":
        """Build from a label such as ``"XIZY"``; character ``i`` is site ``i``."""
        x = z = 0
        for i, ch in enumerate(label.upper()):
            try:
                bx, bz = _LETTER_BITS[ch]
            except KeyError:
                raise ValidationError(f"bad Pauli letter {ch!r} in {label!r}") from None
            x |= bx << i
            z |= bz << i
        return cls(x, z, len(label))

    @classmethod
    def identity(cls, n_sites: int) -> "PauliString":
        return cls(0, 0, n_sites)

    @classmethod
    def single(cls, letter: str, site: int, n_sites: int) -> "PauliString":
        if not 0 <= site < n_sites:
            raise ValidationError(f"site {site} out of range for {n_sites} sites")
        bx, bz = _LETTER_BITS[letter.upper()]
        return cls(bx << site, bz << site, n_sites)

    @property
    def label(self) -> str:
        return "".join(
            _BITS_LETTER[((self.x_mask >> i) & 1, (self.z_mask >> i) & 1)]
            for i in range(self.n_sites)
        )

    @property
    def n_y(self) -> int:
        return (self.x_mask & self.z_mask).bit_count()

    @property
    def weight(self) -> int:
        return (self.x_mask | self.z_mask).bit_count()

    def commutes_with(self, other: "PauliString") -> bool:
        s = (self.z_mask & other.x_mask).bit_count() + (other.z_mask & self.x_mask).bit_count()
        return s % 2 == 0

    def __str__(self):
        return self.label


def multiply(a: PauliString, b: PauliString) -> tuple[complex, PauliString]:
    """Return ``(phase, p)`` such that the matrix product ``a @ b == phase * p``."""
    if a.n_sites != b.n_sites:
        raise DimensionError(f"cannot multiply strings on {a.n_sites} and {b.n_sites} sites")
    x = a.x_mask ^ b.x_mask
    z = a.z_mask ^ b.z_mask
    e = a.n_y + b.n_y - (x & z).bit_count() + 2 * (a.z_mask & b.x_mask).bit_count()
    return complex(_I_POW[e % 4]), PauliString(x, z, a.n_sites)


def _collect(x, z, c, n_sites, prune):
    """Merge duplicate strings, drop small coefficients, sort canonically."""
    if len(c) == 0:
        return x[:0], z[:0], c[:0]
    keys = np.ascontiguousarray(np.concatenate([x, z], axis=1))
    view = keys.view(np.dtype((np.void, keys.shape[1] * 8))).ravel()
    _, first, inv = np.unique(view, return_index=True, return_inverse=True)
    inv = inv.ravel()
    m = len(first)
    coef = np.bincount(inv, weights=c.real, minlength=m) + 1j * np.bincount(
        inv, weights=c.imag, minlength=m
    )
    keep = np.abs(coef) >= prune
    idx = first[keep]
    return x[idx], z[idx], coef[keep]


class OperatorSum:
    """A complex linear combination of Pauli strings on ``n_sites`` sites.

    Terms are kept collected (no duplicate strings), pruned below
    ``PRUNE_TOL`` and in a canonical order, so two equal sums have equal
    arrays.  Instances are treated as immutable.

    Parameters
    ----------
    terms : mapping or iterable of (PauliString | str, complex)
        Strings may be given as labels (character ``i`` is site ``i``).
    n_sites : int, optional
        Required when ``terms`` is empty.
    """

    __slots__ = ("n_sites", "_x", "_z", "_c", "_keys")

    def __init__(self, terms=None, n_sites: int | None = None, prune: float = PRUNE_TOL):
        items = list(terms.items() if isinstance(terms, Mapping) else (terms or []))
        strings = [PauliString.from_label(p) if isinstance(p, str) else p for p, _ in items]
        if n_sites is None:
            if not strings:
                raise ValidationError("n_sites is required for an empty OperatorSum")
            n_sites = strings[0].n_sites
        if any(p.n_sites != n_sites for p in strings):
            raise DimensionError("all strings in an OperatorSum must share n_sites")
        nw = _n_words(n_sites)
        x = np.array([_int_to_words(p.x_mask, nw) for p in strings], dtype=np.uint64).reshape(-1, nw)
        z = np.array([_int_to_words(p.z_mask, nw) for p in strings], dtype=np.uint64).reshape(-1, nw)
        c = np.array([complex(v) for _, v in items], dtype=complex)
        self._set(n_sites, *_collect(x, z, c, n_sites, prune))

    def _set(self, n_sites, x, z, c):
        self.n_sites = int(n_sites)
        self._x = x
        self._z = z
        self._c = c
        self._keys = None

    @classmethod
    def _from_arrays(cls, n_sites, x, z, c, collect=True, prune=PRUNE_TOL) -> "OperatorSum":
        obj = cls.__new__(cls)
        if collect:
            x, z, c = _collect(x, z, c, n_sites, prune)
        obj._set(n_sites, x, z, c)
        return obj

    @classmethod
    def zero(cls, n_sites: int) -> "OperatorSum":
        return cls(None, n_sites=n_sites)

    @classmethod
    def from_string(cls, p: PauliString | str, coef: complex = 1.0) -> "OperatorSum":
        return cls([(p, coef)])

    # -- views -------------------------------------------------------------

    @property
    def terms(self) -> dict[PauliString, complex]:
        return dict(iter(self))

    @property
    def coefficients(self) -> np.ndarray:
        return self._c.copy()

    def masks(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-term ``(x, z)`` masks as int64 arrays; only for n_sites < 64."""
        if self.n_sites >= 63:
            raise CapacityError("integer masks need n_sites < 63")
        return self._x[:, 0].astype(np.int64), self._z[:, 0].astype(np.int64)

    def _key_view(self):
        if self._keys is None:
            keys = np.ascontiguousarray(np.concatenate([self._x, self._z], axis=1))
            self._keys = keys.view(np.dtype((np.void, keys.shape[1] * 8))).ravel()
        return self._keys

    def __len__(self):
        return len(self._c)

    def __iter__(self) -> Iterator[tuple[PauliString, complex]]:
        for xw, zw, c in zip(self._x, self._z, self._c):
            yield PauliString(_words_to_int(xw), _words_to_int(zw), self.n_sites), complex(c)

    def coefficient(self, p: PauliString | str) -> complex:
        if isinstance(p, str):
            p = PauliString.from_label(p)
        return self.terms.get(p, 0j)

    def __repr__(self):
        if not len(self):
            return f"OperatorSum(0, n_sites={self.n_sites})"
        shown = " ".join(f"{c:+.6g}*{p.label}" for p, c in list(self)[:8])
        more = " ..." if len(self) > 8 else ""
        return f"OperatorSum({shown}{more})"

    # -- linear structure ----------------------------------------------------

    def _check(self, other):
        if not isinstance(other, OperatorSum):
            return NotImplemented
        if other.n_sites != self.n_sites:
            raise DimensionError(f"operands on {self.n_sites} and {other.n_sites} sites")
        return other

    def __add__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return OperatorSum._from_arrays(
            self.n_sites,
            np.concatenate([self._x, other._x]),
            np.concatenate([self._z, other._z]),
            np.concatenate([self._c, other._c]),
        )

    def __sub__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return self + (-other)

    def __neg__(self):
        return OperatorSum._from_arrays(self.n_sites, self._x, self._z, -self._c, collect=False)

    def __mul__(self, scalar):
        if isinstance(scalar, OperatorSum):
            return NotImplemented
        s = complex(scalar)
        if s == 0:
            return OperatorSum.zero(self.n_sites)
        return OperatorSum._from_arrays(self.n_sites, self._x, self._z, self._c * s)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / complex(scalar))

    def __matmul__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return _pair_sum(self, other, commutator=False)

    def __eq__(self, other):
        if not isinstance(other, OperatorSum):
            return NotImplemented
        return (
            self.n_sites == other.n_sites
            and np.array_equal(self._x, other._x)
            and np.array_equal(self._z, other._z)
            and np.array_equal(self._c, other._c)
        )

    __hash__ = None

    def allclose(self, other: "OperatorSum", atol: float = 1e-12) -> bool:
        diff = self - other
        return len(diff) == 0 or float(np.max(np.abs(diff._c))) <= atol

    def adjoint(self) -> "OperatorSum":
        return OperatorSum._from_arrays(self.n_sites, self._x, self._z, self._c.conj(), collect=False)

    def is_hermitian(self, atol: float = 1e-12) -> bool:
        return len(self) == 0 or float(np.max(np.abs(self._c.imag))) <= atol

    def is_antihermitian(self, atol: float = 1e-12) -> bool:
        return len(self) == 0 or float(np.max(np.abs(self._c.real))) <= atol

    def norm(self) -> float:
        """Rescaled Hilbert-Schmidt norm ``sqrt(Tr(A^dag A) / 2**n)``."""
        return float(np.sqrt(np.sum(np.abs(self._c) ** 2)))

    def translate(self, shift: int) -> "OperatorSum":
        """Cyclically move site ``i`` to site ``i + shift`` (mod n_sites)."""
        n = self.n_sites
        shift %= n
        full = (1 << n) - 1

        def rot(m):
            return ((m << shift) | (m >> (n - shift))) & full

        return OperatorSum([(PauliString(rot(p.x_mask), rot(p.z_mask), n), c) for p, c in self], n_sites=n)

    def permute_sites(self, perm) -> "OperatorSum":
        """Relabel sites: the factor on site ``i`` moves to site ``perm[i]``."""
        if sorted(perm) != list(range(self.n_sites)):
            raise ValidationError(f"not a permutation of {self.n_sites} sites: {perm}")
        return OperatorSum._from_arrays(
            self.n_sites, _permute_bits(self._x, [perm]), _permute_bits(self._z, [perm]), self._c
        )

    def symmetrized(self, perms) -> "OperatorSum":
        """Average over a group of site permutations."""
        perms = list(perms)
        return OperatorSum._from_arrays(
            self.n_sites,
            _permute_bits(self._x, perms),
            _permute_bits(self._z, perms),
            np.tile(self._c, len(perms)) / len(perms),
        )


def _permute_bits(words: np.ndarray, perms) -> np.ndarray:
    """Apply each site permutation to every row; returns ``len(perms) * rows`` rows."""
    n_rows, nw = words.shape
    if n_rows == 0:
        return words[:0]
    bits = np.unpackbits(np.ascontiguousarray(words).view(np.uint8), axis=1, bitorder="little")
    n = len(perms[0])
    out = np.zeros((len(perms), n_rows, nw * _WORD_BITS), dtype=np.uint8)
    for k, perm in enumerate(perms):
        out[k][:, list(perm)] = bits[:, :n]
    packed = np.packbits(out.reshape(len(perms) * n_rows, -1), axis=1, bitorder="little")
    return np.ascontiguousarray(packed).view(np.uint64).reshape(-1, nw)


def _pair_chunks(a_x, a_z, b_x, b_z, commutator: bool):
    """Products of all string pairs, chunked over rows of ``a``.

    Yields ``(lo, px, pz, e, anti)`` where ``px, pz`` have shape
    ``(rows, len(b), n_words)``, ``e`` is the phase exponent of ``a_i b_j``
    and ``anti`` marks anticommuting pairs (``None`` unless ``commutator``).
    """
    ya = _popcount(a_x & a_z)
    yb = _popcount(b_x & b_z)
    chunk = max(1, _PAIR_CHUNK // len(b_x))
    bx, bz = b_x[None, :, :], b_z[None, :, :]
    for lo in range(0, len(a_x), chunk):
        ax, az = a_x[lo:lo + chunk, None, :], a_z[lo:lo + chunk, None, :]
        px = ax ^ bx
        pz = az ^ bz
        s_ab = _popcount(az & bx)
        e = ya[lo:lo + chunk, None] + yb[None, :] - _popcount(px & pz) + 2 * s_ab
        anti = None
        if commutator:
            anti = ((s_ab + _popcount(bz & ax)) & 1).astype(bool)
        yield lo, px, pz, e, anti


def _pair_sum(a: OperatorSum, b: OperatorSum, commutator: bool) -> OperatorSum:
    n = a.n_sites
    if len(a) == 0 or len(b) == 0:
        return OperatorSum.zero(n)
    xs, zs, cs = [], [], []
    for lo, px, pz, e, anti in _pair_chunks(a._x, a._z, b._x, b._z, commutator):
        coef = a._c[lo:lo + px.shape[0], None] * b._c[None, :] * _I_POW[e % 4]
        if commutator:
            px, pz, coef = px[anti], pz[anti], 2.0 * coef[anti]
        else:
            px, pz, coef = px.reshape(-1, px.shape[-1]), pz.reshape(-1, pz.shape[-1]), coef.ravel()
        xs.append(px)
        zs.append(pz)
        cs.append(coef)
    return OperatorSum._from_arrays(n, np.concatenate(xs), np.concatenate(zs), np.concatenate(cs))


def commutator(a: OperatorSum, b: OperatorSum) -> OperatorSum:
    """``[a, b] = ab - ba``; only anticommuting string pairs contribute."""
    if a.n_sites != b.n_sites:
        raise DimensionError(f"operands on {a.n_sites} and {b.n_sites} sites")
    return _pair_sum(a, b, commutator=True)


def hs_inner(a: OperatorSum, b: OperatorSum) -> complex:
    """Rescaled Hilbert-Schmidt inner product ``Tr(a^dag b) / 2**n``."""
    if a.n_sites != b.n_sites:
        raise DimensionError(f"operands on {a.n_sites} and {b.n_sites} sites")
    if len(a) == 0 or len(b) == 0:
        return 0j
    _, ia, ib = np.intersect1d(a._key_view(), b._key_view(), assume_unique=True, return_indices=True)
    return complex(np.dot(a._c[ia].conj(), b._c[ib]))


def hs_norm(a: OperatorSum) -> float:
    return a.norm()


def dense_matrix(a: OperatorSum, dense_limit: int = DENSE_LIMIT) -> np.ndarray:
    """Dense ``2**n x 2**n`` matrix; site 0 is the least significant bit."""
    n = a.n_sites
    if n > dense_limit:
        raise CapacityError(f"dense matrix for {n} sites exceeds limit {dense_limit}")
    dim = 1 << n
    s = np.arange(dim, dtype=np.int64)
    out = np.zeros((dim, dim), dtype=complex)
    xs, zs = a.masks()
    for x, z, c in zip(xs, zs, a._c):
        y = int(np.bitwise_count(x & z))
        sign = 1 - 2 * (np.bitwise_count(s & z) & 1).astype(np.int64)
        out[s ^ x, s] += c * _I_POW[y % 4] * sign
    return out


def total(ops: Iterable[OperatorSum], n_sites: int) -> OperatorSum:
    """Sum of several operators with a single collection pass."""
    ops = [o for o in ops]
    if not ops:
        return OperatorSum.zero(n_sites)
    if any(o.n_sites != n_sites for o in ops):
        raise DimensionError("mixed n_sites in sum")
    return OperatorSum._from_arrays(
        n_sites,
        np.concatenate([o._x for o in ops]),
        np.concatenate([o._z for o in ops]),
        np.concatenate([o._c for o in ops]),
    )
