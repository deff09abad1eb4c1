"""Pauli strings in the symplectic (x-mask, z-mask) representation.

A string on ``n_sites`` qubits is stored as two integers. Bit ``i`` of
``x_mask`` / ``z_mask`` gives the X / Z component on site ``i``; a site with
both bits set carries ``Y``. Strings are always the Hermitian Pauli words
(``I, X, Y, Z`` per site); phases only appear as the output of products.

Site 0 is the leftmost character of a label and the leftmost (most
significant) factor of the Kronecker product used by :func:`to_dense`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "PauliString",
    "OperatorSum",
    "ModelSpec",
    "MODELS",
    "DEFAULT_DENSE_CAP",
    "pauli_mul",
    "commutes",
    "trace_product",
    "build_model",
    "free_model",
    "to_dense",
]

DEFAULT_DENSE_CAP = 14

# i**k for k mod 4
_PHASES = (1, 1j, -1, -1j)


def _popcount(v: int) -> int:
    return v.bit_count()


@dataclass(frozen=True, order=True)
class PauliString:
    n_sites: int
    x_mask: int = 0
    z_mask: int = 0

    def __post_init__(self):
        if self.n_sites < 1:
            raise ValueError(f"n_sites must be positive, got {self.n_sites}")
        limit = 1 << self.n_sites
        if not (0 <= self.x_mask < limit and 0 <= self.z_mask < limit):
            raise ValueError("masks exceed n_sites bits")

    @classmethod
    def identity(cls, n_sites: int) -> PauliString:
        return cls(n_sites, 0, 0)

    @classmethod
    def from_label(cls, label: str) -> PauliString:
        """Parse a label such as ``"XIZY"`` (site 0 first)."""
        label = label.strip().upper()
        if not label:
            raise ValueError("empty Pauli label")
        x = z = 0
        for i, ch in enumerate(label):
            if ch == "X":
                x |= 1 << i
            elif ch == "Z":
                z |= 1 << i
            elif ch == "Y":
                x |= 1 << i
                z |= 1 << i
            elif ch != "I":
                raise ValueError(f"invalid Pauli character {ch!r}")
        return cls(len(label), x, z)

    @classmethod
    def from_sites(cls, n_sites: int, ops: Mapping[int, str]) -> PauliString:
        """Build from a sparse ``{site: "X"|"Y"|"Z"}`` map."""
        chars = ["I"] * n_sites
        for site, op in ops.items():
            if not 0 <= site < n_sites:
                raise ValueError(f"site {site} out of range for {n_sites} sites")
            chars[site] = op
        return cls.from_label("".join(chars))

    @property
    def label(self) -> str:
        out = []
        for i in range(self.n_sites):
            xb = (self.x_mask >> i) & 1
            zb = (self.z_mask >> i) & 1
            out.append("IXZY"[xb | (zb << 1)])
        return "".join(out)

    @property
    def weight(self) -> int:
        return _popcount(self.x_mask | self.z_mask)

    def is_identity(self) -> bool:
        return self.x_mask == 0 and self.z_mask == 0

    def matrix(self) -> np.ndarray:
        """Dense ``2^N x 2^N`` matrix (site 0 is the leftmost Kronecker factor)."""
        single = {
            "I": np.eye(2, dtype=complex),
            "X": np.array([[0, 1], [1, 0]], dtype=complex),
            "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
            "Z": np.array([[1, 0], [0, -1]], dtype=complex),
        }
        m = np.ones((1, 1), dtype=complex)
        for ch in self.label:
            m = np.kron(m, single[ch])
        return m

    def __str__(self) -> str:
        return self.label


def _check_sites(a: PauliString, b: PauliString) -> None:
    if a.n_sites != b.n_sites:
        raise ValueError(f"site-count mismatch: {a.n_sites} vs {b.n_sites}")


def _mul_exponent(ax: int, az: int, bx: int, bz: int) -> tuple[int, int, int]:
    """Return (x, z, k) with P(a) P(b) = i**k P(x, z).

    Uses P(x, z) = i^{|x&z|} X^x Z^z and Z^z X^x = (-1)^{|z&x|} X^x Z^z.
    """
    x = ax ^ bx
    z = az ^ bz
    k = _popcount(ax & az) + _popcount(bx & bz) - _popcount(x & z) + 2 * _popcount(az & bx)
    return x, z, k % 4


def pauli_mul(a: PauliString, b: PauliString) -> tuple[PauliString, complex]:
    """Product ``a . b`` as ``(string, phase)`` with phase in {1, i, -1, -i}."""
    _check_sites(a, b)
    x, z, k = _mul_exponent(a.x_mask, a.z_mask, b.x_mask, b.z_mask)
    return PauliString(a.n_sites, x, z), _PHASES[k]


def commutes(a: PauliString, b: PauliString) -> bool:
    """True iff the symplectic product of ``a`` and ``b`` is even."""
    _check_sites(a, b)
    return (_popcount(a.x_mask & b.z_mask) + _popcount(a.z_mask & b.x_mask)) % 2 == 0


def trace_product(strings: Sequence[PauliString]) -> complex:
    """Trace of the ordered product of ``strings``.

    Nonzero only if the product is proportional to the identity, in which case
    it equals ``phase * 2**N``.
    """
    if len(strings) == 0:
        raise ValueError("trace_product needs at least one string")
    n = strings[0].n_sites
    x = z = k = 0
    for s in strings:
        if s.n_sites != n:
            raise ValueError(f"site-count mismatch: {n} vs {s.n_sites}")
        x, z, dk = _mul_exponent(x, z, s.x_mask, s.z_mask)
        k += dk
    if x or z:
        return 0j
    return complex(_PHASES[k % 4]) * float(2**n)


@dataclass(frozen=True)
class OperatorSum:
    """Real linear combination of Pauli strings, ``H = sum_i h_i tau_i``.

    Duplicate strings are merged on construction and exact-zero coefficients
    dropped. Term order is first appearance.
    """

    n_sites: int
    terms: tuple[tuple[float, PauliString], ...] = field(default=())

    def __post_init__(self):
        if self.n_sites < 1:
            raise ValueError("n_sites must be positive")
        merged: dict[PauliString, float] = {}
        for coef, string in self.terms:
            if string.n_sites != self.n_sites:
                raise ValueError(
                    f"term {string.label} has {string.n_sites} sites, expected {self.n_sites}"
                )
            if isinstance(coef, complex) or np.iscomplexobj(coef):
                if complex(coef).imag != 0:
                    raise ValueError("coefficients must be real")
                coef = complex(coef).real
            merged[string] = merged.get(string, 0.0) + float(coef)
        terms = tuple((c, s) for s, c in merged.items() if c != 0.0)
        object.__setattr__(self, "terms", terms)

    @classmethod
    def from_labels(cls, pairs: Iterable[tuple[float, str]]) -> OperatorSum:
        pairs = [(c, PauliString.from_label(lab)) for c, lab in pairs]
        if not pairs:
            raise ValueError("need at least one term to infer n_sites")
        return cls(pairs[0][1].n_sites, tuple(pairs))

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([c for c, _ in self.terms], dtype=float)

    @property
    def strings(self) -> list[PauliString]:
        return [s for _, s in self.terms]

    def identity_coefficient(self) -> float:
        for c, s in self.terms:
            if s.is_identity():
                return c
        return 0.0

    def traceless(self) -> OperatorSum:
        """Copy with the identity component removed."""
        return OperatorSum(self.n_sites, tuple((c, s) for c, s in self.terms if not s.is_identity()))

    def scaled(self, factor: float) -> OperatorSum:
        return OperatorSum(self.n_sites, tuple((factor * c, s) for c, s in self.terms))

    def __add__(self, other: OperatorSum) -> OperatorSum:
        if not isinstance(other, OperatorSum):
            return NotImplemented
        if other.n_sites != self.n_sites:
            raise ValueError("site-count mismatch")
        return OperatorSum(self.n_sites, self.terms + other.terms)

    def to_dict(self) -> dict:
        return {
            "n_sites": self.n_sites,
            "terms": [[c, s.label] for c, s in self.terms],
        }


# -- model construction ------------------------------------------------------

MODELS = ("ising", "transverse-ising", "xxx", "xxz-nnn")

_DEFAULT_COUPLINGS = {
    "ising": {"J": 1.0},
    "transverse-ising": {"J": 1.0, "h": 1.0},
    "xxx": {"J": 1.0},
    "xxz-nnn": {"J": 1.0, "delta": 0.5, "J2": 0.5},
}

_ALIASES = {
    "classical-ising": "ising",
    "tfim": "transverse-ising",
    "tfi": "transverse-ising",
    "heisenberg": "xxx",
    "xxz": "xxz-nnn",
}


@dataclass(frozen=True)
class ModelSpec:
    """Description of a built-in 1D chain.

    JSON form: ``{"model": ..., "length": L, "couplings": {...}, "boundary": "open"}``.

    Coupling keys (missing keys take the defaults):

    * ``ising``: ``J`` for ``J sum Z_i Z_{i+1}``
    * ``transverse-ising``: ``J``, ``h`` for ``J sum Z_i Z_{i+1} + h sum X_i``
    * ``xxx``: ``J`` for ``J sum (XX + YY + ZZ)``
    * ``xxz-nnn``: ``J``, ``delta``, ``J2`` for
      ``J sum (XX + YY + delta ZZ)_{i,i+1} + J2 sum (XX + YY + delta ZZ)_{i,i+2}``
    """

    model: str
    length: int
    couplings: Mapping[str, float] = field(default_factory=dict)
    boundary: str = "open"

    def __post_init__(self):
        name = _ALIASES.get(self.model.lower(), self.model.lower())
        if name not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; choose from {', '.join(MODELS)}")
        object.__setattr__(self, "model", name)
        if self.length < 2:
            raise ValueError(f"chain length must be >= 2, got {self.length}")
        if self.boundary not in ("open", "periodic"):
            raise ValueError(f"boundary must be 'open' or 'periodic', got {self.boundary!r}")
        unknown = set(self.couplings) - set(_DEFAULT_COUPLINGS[name])
        if unknown:
            raise ValueError(f"unknown couplings for {name}: {sorted(unknown)}")
        full = dict(_DEFAULT_COUPLINGS[name])
        full.update({k: float(v) for k, v in self.couplings.items()})
        object.__setattr__(self, "couplings", full)

    @classmethod
    def from_dict(cls, data: Mapping) -> ModelSpec:
        missing = {"model", "length"} - set(data)
        if missing:
            raise ValueError(f"model spec missing keys: {sorted(missing)}")
        return cls(
            model=str(data["model"]),
            length=int(data["length"]),
            couplings=dict(data.get("couplings", {})),
            boundary=str(data.get("boundary", "open")),
        )

    @classmethod
    def from_json(cls, text: str) -> ModelSpec:
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "length": self.length,
            "couplings": dict(self.couplings),
            "boundary": self.boundary,
        }


def _bonds(length: int, distance: int, periodic: bool) -> list[tuple[int, int]]:
    if periodic:
        return [(i, (i + distance) % length) for i in range(length) if (i + distance) % length != i]
    return [(i, i + distance) for i in range(length - distance)]


def build_model(spec: ModelSpec) -> OperatorSum:
    L = spec.length
    periodic = spec.boundary == "periodic"
    c = spec.couplings
    terms: list[tuple[float, PauliString]] = []

    def two_site(coef, i, j, op):
        terms.append((coef, PauliString.from_sites(L, {i: op, j: op})))

    if spec.model in ("ising", "transverse-ising"):
        for i, j in _bonds(L, 1, periodic):
            two_site(c["J"], i, j, "Z")
        if spec.model == "transverse-ising":
            for i in range(L):
                terms.append((c["h"], PauliString.from_sites(L, {i: "X"})))
    elif spec.model == "xxx":
        for i, j in _bonds(L, 1, periodic):
            for op in "XYZ":
                two_site(c["J"], i, j, op)
    else:
        for dist, scale in ((1, c["J"]), (2, c["J2"])):
            if dist >= L:
                continue
            for i, j in _bonds(L, dist, periodic):
                two_site(scale, i, j, "X")
                two_site(scale, i, j, "Y")
                two_site(scale * c["delta"], i, j, "Z")
    return OperatorSum(L, tuple(terms))


def free_model(couplings) -> OperatorSum:
    """``sum_i h_i Z_i`` on ``len(couplings)`` sites (the commuting free model)."""
    h = [float(v) for v in couplings]
    if not h:
        raise ValueError("need at least one coupling")
    n = len(h)
    return OperatorSum(n, tuple((hi, PauliString.from_sites(n, {i: "Z"})) for i, hi in enumerate(h)))


# -- dense realisation -------------------------------------------------------


def _index_mask(mask: int, n: int) -> int:
    # site i sits at bit (n - 1 - i) of a basis index (site 0 most significant)
    out = 0
    for i in range(n):
        if (mask >> i) & 1:
            out |= 1 << (n - 1 - i)
    return out


def to_dense(op: OperatorSum, max_sites: int = DEFAULT_DENSE_CAP) -> np.ndarray:
    """Dense Hermitian matrix of ``op``; real dtype when no imaginary entries occur."""
    n = op.n_sites
    if n > max_sites:
        raise ValueError(f"{n} sites exceeds dense cap of {max_sites}")
    dim = 1 << n
    cols = np.arange(dim, dtype=np.int64)
    # total Y count parity decides whether the matrix can be taken real
    real = all(_popcount(s.x_mask & s.z_mask) % 2 == 0 for s in op.strings)
    out = np.zeros((dim, dim), dtype=float if real else complex)
    for coef, s in op.terms:
        xm = _index_mask(s.x_mask, n)
        zm = _index_mask(s.z_mask, n)
        signs = 1 - 2 * (np.bitwise_count(cols & zm) & 1).astype(np.int64)
        phase = _PHASES[_popcount(s.x_mask & s.z_mask) % 4]
        vals = coef * phase * signs
        out[cols ^ xm, cols] += vals.real if real else vals
    return out
