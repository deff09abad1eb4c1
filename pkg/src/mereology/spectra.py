"""Spectra: GOE sampling, dense diagonalisation and free-model enumeration."""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .pauli import DEFAULT_DENSE_CAP, OperatorSum, to_dense

__all__ = [
    "Spectrum",
    "sample_goe",
    "diagonalize",
    "free_spectrum",
    "FREE_ENUMERATION_CAP",
    "SCHEMA_VERSION",
]

FREE_ENUMERATION_CAP = 20
SCHEMA_VERSION = 1


def _log2_exact(n: int) -> Optional[int]:
    if n >= 1 and n & (n - 1) == 0:
        return n.bit_length() - 1
    return None


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Ascending, finite list of energies plus provenance.

    ``n_qubits`` is inferred when the length is a power of two and left as
    ``None`` otherwise.
    """

    energies: np.ndarray
    n_qubits: Optional[int] = None
    source: str = "synthetic"
    seed: Optional[int] = None

    def __post_init__(self):
        e = np.array(self.energies, dtype=float).ravel()
        if e.size == 0:
            raise ValueError("spectrum must contain at least one energy")
        if not np.all(np.isfinite(e)):
            raise ValueError("spectrum contains non-finite energies")
        if np.any(np.diff(e) < 0):
            raise ValueError("energies must be sorted ascending; use Spectrum.from_values")
        e.setflags(write=False)
        object.__setattr__(self, "energies", e)
        n = self.n_qubits
        if n is None:
            n = _log2_exact(e.size)
        elif e.size != 2**n:
            raise ValueError(f"length {e.size} != 2**{n}")
        object.__setattr__(self, "n_qubits", n)

    @classmethod
    def from_values(cls, values, **kwargs) -> Spectrum:
        return cls(np.sort(np.asarray(values, dtype=float).ravel()), **kwargs)

    def __len__(self) -> int:
        return self.energies.size

    @property
    def dimension(self) -> int:
        return self.energies.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, Spectrum):
            return NotImplemented
        return (
            np.array_equal(self.energies, other.energies)
            and self.n_qubits == other.n_qubits
            and self.source == other.source
            and self.seed == other.seed
        )

    # -- serialisation -----------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "energies": self.energies.tolist(),
            "n_qubits": self.n_qubits,
            "source": self.source,
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> Spectrum:
        if "energies" not in data:
            raise ValueError("spectrum JSON lacks 'energies'")
        return cls.from_values(
            data["energies"],
            n_qubits=data.get("n_qubits"),
            source=data.get("source", "synthetic"),
            seed=data.get("seed"),
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# schema_version: {SCHEMA_VERSION}\n")
        buf.write(f"# source: {self.source}\n")
        buf.write(f"# seed: {'' if self.seed is None else self.seed}\n")
        buf.write(f"# n_qubits: {'' if self.n_qubits is None else self.n_qubits}\n")
        for v in self.energies:
            buf.write(f"{float(v)!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> Spectrum:
        meta: dict[str, str] = {}
        values = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                meta[key.strip()] = val.strip()
                continue
            if line.lower() == "energy":
                continue
            try:
                values.append(float(line.split(",")[0]))
            except ValueError as exc:
                raise ValueError(f"line {lineno}: cannot parse energy {line!r}") from exc
        seed = meta.get("seed") or None
        nq = meta.get("n_qubits") or None
        return cls.from_values(
            values,
            n_qubits=None if nq is None else int(nq),
            source=meta.get("source", "synthetic"),
            seed=None if seed is None else int(seed),
        )

    @classmethod
    def load(cls, path) -> Spectrum:
        path = Path(path)
        text = path.read_text()
        if path.suffix.lower() == ".json":
            data = json.loads(text)
            # accept envelopes written by the CLI, which nest the spectrum
            data = data.get("spectrum", data)
            return cls.from_json_dict(data)
        return cls.from_csv(text)


def sample_goe(n_qubits: int, seed: int, max_qubits: int = DEFAULT_DENSE_CAP) -> Spectrum:
    """Eigenvalues of ``(G + G^T) / 2`` with ``G`` a ``2^n x 2^n`` standard normal matrix."""
    if not 1 <= n_qubits <= max_qubits:
        raise ValueError(f"n_qubits must be in [1, {max_qubits}], got {n_qubits}")
    dim = 2**n_qubits
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((dim, dim))
    h = (g + g.T) / 2
    return Spectrum(np.linalg.eigvalsh(h), n_qubits=n_qubits, source="GOE", seed=seed)


def diagonalize(op: OperatorSum, max_sites: int = DEFAULT_DENSE_CAP, source: str = "model") -> Spectrum:
    h = to_dense(op, max_sites=max_sites)
    return Spectrum(np.linalg.eigvalsh(h), n_qubits=op.n_sites, source=source)


def free_spectrum(couplings: Sequence[float], max_terms: int = FREE_ENUMERATION_CAP) -> Spectrum:
    """All ``2^M`` signed sums ``sum_i s_i h_i``, i.e. the spectrum of ``sum_i h_i Z_i``."""
    h = np.asarray(couplings, dtype=float).ravel()
    if h.size < 1:
        raise ValueError("need at least one coupling")
    if h.size > max_terms:
        raise ValueError(f"{h.size} couplings exceeds enumeration cap {max_terms}")
    levels = np.zeros(1)
    for hi in h:
        levels = np.concatenate([levels + hi, levels - hi])
    return Spectrum(np.sort(levels), n_qubits=h.size, source="free")


def spectral_radius(s: Spectrum) -> float:
    return float(np.max(np.abs(s.energies)))


def is_power_of_two(n: int) -> bool:
    return _log2_exact(n) is not None


def isqrt_exact(n: int) -> Optional[int]:
    r = math.isqrt(n)
    return r if r * r == n else None
