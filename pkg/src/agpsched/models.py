"""Annealing problem instances and Hamiltonian assembly.

Every model is stored in one canonical form,

    H_P = -sum_{i<j} J_ij Z_i Z_j - sum_i h_i Z_i,      H_V = -sum_i X_i,

and the named families (``tfim``, ``annni``) expand onto it.  The ANNNI
next-nearest-neighbour term enters H_P as ``+k Z_i Z_{i+2}``, so the
expansion stores ``J_{i,i+2} = -k``.  Periodic bonds that wrap onto an
existing pair (L = 2 for nearest neighbours, L = 4 for next-nearest) are
summed, matching the literal sum over ``i = 1..L``.

Model files are TOML::

    family = "annni"        # tfim | annni | generic
    n_sites = 6
    boundary = "periodic"   # periodic | open (named families only)
    J = 1.0
    k = 0.3                 # annni only

    # generic only:
    couplings = [[0, 1, 1.0], [1, 2, -0.5]]   # rows [i, j, J_ij], i < j
    fields = [[0, 0.2]]                       # rows [i, h_i]

Unknown keys are rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import DuplicateCouplingError, ModelParseError, ValidationError
from .pauli import OperatorSum, PauliString

FAMILIES = ("generic", "tfim", "annni")
BOUNDARIES = ("periodic", "open")

_ALLOWED_KEYS = {
    "generic": {"family", "n_sites", "couplings", "fields"},
    "tfim": {"family", "n_sites", "boundary", "J"},
    "annni": {"family", "n_sites", "boundary", "J", "k"},
}


@dataclass(frozen=True)
class AnnealingModel:
    n_sites: int
    couplings: tuple[tuple[int, int, float], ...] = ()
    fields_z: tuple[tuple[int, float], ...] = ()
    boundary: str = "open"
    family: str = "generic"
    params: tuple[tuple[str, float], ...] = field(default=())

    def __post_init__(self):
        if not isinstance(self.n_sites, int) or self.n_sites < 1:
            raise ValidationError(f"n_sites must be a positive integer, got {self.n_sites!r}")
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown family {self.family!r}")
        if self.boundary not in BOUNDARIES:
            raise ValidationError(f"unknown boundary {self.boundary!r}")
        seen = set()
        for i, j, J in self.couplings:
            if not (0 <= i < j < self.n_sites):
                raise ValidationError(f"coupling ({i}, {j}) needs 0 <= i < j < {self.n_sites}")
            if (i, j) in seen:
                raise DuplicateCouplingError(f"duplicate coupling ({i}, {j})")
            if not math.isfinite(J):
                raise ValidationError(f"non-finite coupling J[{i},{j}] = {J}")
            seen.add((i, j))
        sites = set()
        for i, h in self.fields_z:
            if not 0 <= i < self.n_sites:
                raise ValidationError(f"field site {i} out of range for {self.n_sites} sites")
            if i in sites:
                raise ModelParseError(f"duplicate field on site {i}")
            if not math.isfinite(h):
                raise ValidationError(f"non-finite field h[{i}] = {h}")
            sites.add(i)

    @property
    def tag(self) -> str:
        if self.family == "generic":
            return f"generic(L={self.n_sites},bonds={len(self.couplings)},fields={len(self.fields_z)})"
        args = ",".join(f"{k}={v:g}" for k, v in self.params)
        return f"{self.family}(L={self.n_sites},{args},{self.boundary})"

    def param(self, name: str) -> float:
        return dict(self.params)[name]

    def to_dict(self) -> dict:
        if self.family == "generic":
            return {
                "family": "generic",
                "n_sites": self.n_sites,
                "couplings": [[i, j, J] for i, j, J in self.couplings],
                "fields": [[i, h] for i, h in self.fields_z],
            }
        return {"family": self.family, "n_sites": self.n_sites, "boundary": self.boundary, **dict(self.params)}

    def expanded(self) -> "AnnealingModel":
        """The same Hamiltonian as a ``generic`` model."""
        return AnnealingModel(self.n_sites, self.couplings, self.fields_z)


def _bonds(n_sites: int, distance: int, periodic: bool) -> list[tuple[int, int]]:
    out = []
    for i in range(n_sites):
        j = i + distance
        if j >= n_sites:
            if not periodic:
                continue
            j %= n_sites
        if i == j:
            continue
        out.append((min(i, j), max(i, j)))
    return out


def _accumulate(n_sites, terms):
    acc: dict[tuple[int, int], float] = {}
    for (i, j), J in terms:
        acc[(i, j)] = acc.get((i, j), 0.0) + J
    return tuple((i, j, J) for (i, j), J in sorted(acc.items()))


def tfim(n_sites: int, J: float = 1.0, boundary: str = "periodic") -> AnnealingModel:
    periodic = boundary == "periodic"
    couplings = _accumulate(n_sites, [(b, J) for b in _bonds(n_sites, 1, periodic)])
    return AnnealingModel(n_sites, couplings, (), boundary, "tfim", (("J", float(J)),))


def annni(n_sites: int, J: float = 1.0, k: float = 0.3, boundary: str = "periodic") -> AnnealingModel:
    periodic = boundary == "periodic"
    terms = [(b, J) for b in _bonds(n_sites, 1, periodic)]
    terms += [(b, -k) for b in _bonds(n_sites, 2, periodic)]
    couplings = _accumulate(n_sites, terms)
    return AnnealingModel(n_sites, couplings, (), boundary, "annni", (("J", float(J)), ("k", float(k))))


def generic(n_sites: int, couplings=(), fields=()) -> AnnealingModel:
    return AnnealingModel(
        n_sites,
        tuple((int(i), int(j), float(J)) for i, j, J in couplings),
        tuple((int(i), float(h)) for i, h in fields),
    )


def problem_hamiltonian(m: AnnealingModel) -> OperatorSum:
    n = m.n_sites
    terms = [(PauliString(0, (1 << i) | (1 << j), n), -J) for i, j, J in m.couplings]
    terms += [(PauliString(0, 1 << i, n), -h) for i, h in m.fields_z]
    return OperatorSum(terms, n_sites=n)


def driver_hamiltonian(m: AnnealingModel) -> OperatorSum:
    n = m.n_sites
    return OperatorSum([(PauliString(1 << i, 0, n), -1.0) for i in range(n)], n_sites=n)


def interpolated_hamiltonian(m: AnnealingModel, lam: float) -> OperatorSum:
    """``lam * H_P + (1 - lam) * H_V`` for ``lam`` in [0, 1]."""
    if not 0.0 <= lam <= 1.0:
        raise ValidationError(f"lambda must lie in [0, 1], got {lam}")
    hp, hv = problem_hamiltonian(m), driver_hamiltonian(m)
    if lam == 0.0:
        return hv
    if lam == 1.0:
        return hp
    return lam * hp + (1.0 - lam) * hv


def lambda_derivative(m: AnnealingModel) -> OperatorSum:
    """``H_P - H_V``; independent of lambda."""
    return problem_hamiltonian(m) - driver_hamiltonian(m)


# -- file format --------------------------------------------------------------


def _number(doc, key, where):
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ModelParseError(f"{where}: field {key!r} must be a number, got {v!r}")
    return float(v)


def model_from_dict(doc: dict, where: str = "<model>") -> AnnealingModel:
    family = doc.get("family")
    if family not in FAMILIES:
        raise ModelParseError(f"{where}: field 'family' must be one of {FAMILIES}, got {family!r}")
    unknown = set(doc) - _ALLOWED_KEYS[family]
    if unknown:
        raise ModelParseError(f"{where}: unknown key(s) {sorted(unknown)} for family {family!r}")
    n = doc.get("n_sites")
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise ModelParseError(f"{where}: field 'n_sites' must be a positive integer, got {n!r}")

    if family == "generic":
        couplings = []
        for row_no, row in enumerate(doc.get("couplings", [])):
            if not (isinstance(row, list) and len(row) == 3):
                raise ModelParseError(f"{where}: couplings[{row_no}] must be [i, j, J], got {row!r}")
            i, j, J = row
            if not (isinstance(i, int) and isinstance(j, int)):
                raise ModelParseError(f"{where}: couplings[{row_no}] site indices must be integers")
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise ModelParseError(f"{where}: couplings[{row_no}] index out of range: ({i}, {j}) with n_sites={n}")
            couplings.append((min(i, j), max(i, j), float(J)))
        pairs = [(i, j) for i, j, _ in couplings]
        for p in pairs:
            if pairs.count(p) > 1:
                raise DuplicateCouplingError(f"{where}: duplicate coupling {p}")
        fields = []
        for row_no, row in enumerate(doc.get("fields", [])):
            if not (isinstance(row, list) and len(row) == 2 and isinstance(row[0], int)):
                raise ModelParseError(f"{where}: fields[{row_no}] must be [i, h], got {row!r}")
            if not 0 <= row[0] < n:
                raise ModelParseError(f"{where}: fields[{row_no}] index {row[0]} out of range")
            fields.append((row[0], float(row[1])))
        return generic(n, couplings, fields)

    boundary = doc.get("boundary", "periodic")
    if boundary not in BOUNDARIES:
        raise ModelParseError(f"{where}: field 'boundary' must be one of {BOUNDARIES}, got {boundary!r}")
    J = _number(doc, "J", where) if "J" in doc else 1.0
    if family == "tfim":
        return tfim(n, J, boundary)
    if "k" not in doc:
        raise ModelParseError(f"{where}: family 'annni' requires field 'k'")
    return annni(n, J, _number(doc, "k", where), boundary)


def parse_model(source: str, where: str = "<string>") -> AnnealingModel:
    """Parse a TOML model document."""
    try:
        doc = tomllib.loads(source)
    except tomllib.TOMLDecodeError as exc:
        raise ModelParseError(f"{where}: {exc}") from None
    return model_from_dict(doc, where)


def load_model(path) -> AnnealingModel:
    path = Path(path)
    return parse_model(path.read_text(encoding="utf-8"), str(path))


def _toml_value(v):
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(type(v))


def dump_model(m: AnnealingModel) -> str:
    return "".join(f"{k} = {_toml_value(v)}\n" for k, v in m.to_dict().items())
