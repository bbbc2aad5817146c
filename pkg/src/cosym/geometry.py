"""Partially cosymplectic structures of order p in one global chart.

Conventions
-----------
The two-form is stored as a constant antisymmetric matrix ``W`` with
``W[i, j] = omega(e_i, e_j)``, so that the contraction has components
``(i_X omega)_j = sum_i X^i W[i, j]``; as a matrix acting on ``X`` that is
``W.T @ X``.  With ``omega = dq ^ dp`` this gives ``i_{d/dq} omega = dp``.

The flat map ``X -> i_X omega + sum_k eta_k(X) eta_k`` is then the dense
matrix ``W.T + sum_k outer(eta_k, eta_k)``.  All quantities are treated as
dimensionless; the action/energy-squared mismatch between the two terms is a
matter of units only.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.linalg import LinAlgWarning
from scipy.linalg.lapack import dgecon

from .errors import DegenerateStructure, LayoutMismatch

__all__ = [
    "SystemClass",
    "ChartSpec",
    "FlatOperator",
    "CONDITION_LIMIT",
    "build_two_form",
    "flat_operator",
    "flat_apply",
    "flat_solve",
    "reeb_family",
    "pairing_matrix",
    "contraction",
    "is_nondegenerate",
]

CONDITION_LIMIT = 1e12


class SystemClass(enum.Enum):
    SIMPLE_CLOSED = "simple_closed"
    MASS_TRANSFER = "mass_transfer"
    NON_SIMPLE = "non_simple"
    OPEN_SIMPLE = "open_simple"

    @classmethod
    def parse(cls, name: str) -> "SystemClass":
        key = name.strip().lower().replace("-", "_")
        aliases = {
            "simpleclosed": cls.SIMPLE_CLOSED,
            "masstransfer": cls.MASS_TRANSFER,
            "nonsimple": cls.NON_SIMPLE,
            "opensimple": cls.OPEN_SIMPLE,
        }
        try:
            return cls(key)
        except ValueError:
            if key.replace("_", "") in aliases:
                return aliases[key.replace("_", "")]
            raise ValueError(f"unknown system class {name!r}; expected one of {[c.value for c in cls]}") from None


# block order is fixed; the p block is renamed "qdot" on the velocity side
BLOCK_ORDER = ("q", "p", "W", "N", "Gamma", "S", "Sigma")


def _block_names(base: str, count: int) -> list[str]:
    if count == 1:
        return [base]
    return [f"{base}{i + 1}" for i in range(count)]


@dataclass(frozen=True)
class ChartSpec:
    """Coordinate layout of the state manifold for one system class.

    ``n`` mechanical pairs, ``K`` compartments, ``P`` subsystems, ``A`` matter
    ports and ``B`` heat sources.  Layout is q, p, W, N, Gamma, S, Sigma with
    empty blocks omitted.
    """

    system_class: SystemClass
    n: int
    K: int = 0
    P: int = 1
    A: int = 0
    B: int = 0
    velocity: bool = False
    names: tuple[str, ...] = field(init=False)
    blocks: dict = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        cls = self.system_class
        if self.n < 0:
            raise LayoutMismatch("n must be non-negative")
        counts = dict.fromkeys(BLOCK_ORDER, 0)
        counts["q"] = counts["p"] = self.n
        if cls is SystemClass.SIMPLE_CLOSED:
            if self.K or self.A or self.B or self.P != 1:
                raise LayoutMismatch("simple_closed charts have K=A=B=0 and P=1")
            counts["S"] = 1
        elif cls is SystemClass.MASS_TRANSFER:
            if self.K < 1:
                raise LayoutMismatch("mass_transfer needs at least one compartment (K >= 1)")
            if self.A or self.B or self.P != 1:
                raise LayoutMismatch("mass_transfer charts have A=B=0 and P=1")
            counts["W"] = counts["N"] = self.K
            counts["S"] = 1
        elif cls is SystemClass.NON_SIMPLE:
            if self.P < 1:
                raise LayoutMismatch("non_simple needs at least one subsystem (P >= 1)")
            if self.K != self.P:
                raise LayoutMismatch("non_simple uses one compartment per subsystem (K must equal P)")
            if self.A or self.B:
                raise LayoutMismatch("non_simple systems are adiabatically closed (A=B=0)")
            for b in ("W", "N", "Gamma", "S", "Sigma"):
                counts[b] = self.P
        elif cls is SystemClass.OPEN_SIMPLE:
            if self.K != 1 or self.P != 1:
                raise LayoutMismatch("open_simple has exactly one compartment and one entropy (K=P=1)")
            if self.A < 0 or self.B < 0:
                raise LayoutMismatch("port and source counts must be non-negative")
            for b in ("W", "N", "Gamma", "S", "Sigma"):
                counts[b] = 1
        names: list[str] = []
        blocks: dict[str, slice] = {}
        for b in BLOCK_ORDER:
            start = len(names)
            base = "qdot" if (b == "p" and self.velocity) else b
            names.extend(_block_names(base, counts[b]))
            blocks[b] = slice(start, len(names))
        if len(set(names)) != len(names):
            raise LayoutMismatch(f"duplicate coordinate names: {names}")
        object.__setattr__(self, "names", tuple(names))
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def for_class(cls, system_class: SystemClass | str, n: int, K: int = 0, P: int = 1, A: int = 0, B: int = 0,
                  velocity: bool = False) -> "ChartSpec":
        if isinstance(system_class, str):
            system_class = SystemClass.parse(system_class)
        if system_class is SystemClass.NON_SIMPLE and K == 0:
            K = P
        if system_class is SystemClass.OPEN_SIMPLE:
            K = K or 1
        return cls(system_class, n, K, P, A, B, velocity)

    @property
    def D(self) -> int:
        return len(self.names)

    @property
    def n_etas(self) -> int:
        return self.P if self.system_class is SystemClass.NON_SIMPLE else 1

    def block(self, name: str) -> slice:
        return self.blocks[name]

    def block_names(self, name: str) -> tuple[str, ...]:
        return self.names[self.blocks[name]]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"{name!r} is not a coordinate of this chart") from None

    def velocity_chart(self) -> "ChartSpec":
        return ChartSpec(self.system_class, self.n, self.K, self.P, self.A, self.B, velocity=True)

    def momentum_chart(self) -> "ChartSpec":
        return ChartSpec(self.system_class, self.n, self.K, self.P, self.A, self.B, velocity=False)

    def as_dict(self, x: np.ndarray) -> dict[str, float]:
        return {name: float(v) for name, v in zip(self.names, x)}

    def vector(self, values: dict[str, float]) -> np.ndarray:
        missing = [nm for nm in self.names if nm not in values]
        if missing:
            raise LayoutMismatch(f"missing coordinates: {missing}")
        return np.array([float(values[nm]) for nm in self.names])


def build_two_form(chart: ChartSpec, system_class: SystemClass | None = None) -> np.ndarray:
    """Darboux matrix of omega for ``chart``.

    +1 at (q^i, p_i), (W^k, N_k), (Gamma^A, S_A) and -1 at (Gamma^A, Sigma_A),
    mirrored antisymmetrically.
    """
    if system_class is not None and system_class is not chart.system_class:
        raise LayoutMismatch(f"chart was laid out for {chart.system_class.value}, not {system_class.value}")
    D = chart.D
    W = np.zeros((D, D))

    def pair(a: str, b: str, sign: float) -> None:
        ia = range(D)[chart.block(a)]
        ib = range(D)[chart.block(b)]
        if len(ia) != len(ib):
            raise LayoutMismatch(f"blocks {a} and {b} have different sizes")
        for i, j in zip(ia, ib):
            W[i, j] += sign
            W[j, i] -= sign

    pair("q", "p", 1.0)
    pair("W", "N", 1.0)
    if chart.system_class in (SystemClass.NON_SIMPLE, SystemClass.OPEN_SIMPLE):
        pair("Gamma", "S", 1.0)
        pair("Gamma", "Sigma", -1.0)
    return W


def contraction(W: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Components of i_X omega."""
    return W.T @ X


@dataclass(frozen=True)
class FlatOperator:
    """Dense matrix of X -> i_X omega + sum_k eta_k(X) eta_k at one state."""

    two_form: np.ndarray
    etas: tuple[np.ndarray, ...]
    matrix: np.ndarray

    @property
    def D(self) -> int:
        return self.matrix.shape[0]

    def condition(self) -> float:
        return float(np.linalg.cond(self.matrix))

    def determinant(self) -> float:
        return float(np.linalg.det(self.matrix))


def flat_operator(two_form: np.ndarray, etas: Sequence[np.ndarray]) -> FlatOperator:
    W = np.asarray(two_form, dtype=float)
    etas = tuple(np.asarray(e, dtype=float) for e in etas)
    B = W.T.copy()
    for e in etas:
        if e.shape != (W.shape[0],):
            raise LayoutMismatch(f"eta has shape {e.shape}, expected ({W.shape[0]},)")
        B += np.outer(e, e)
    return FlatOperator(W, etas, B)


def flat_apply(op: FlatOperator, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape != (op.D,):
        raise LayoutMismatch(f"vector has shape {X.shape}, expected ({op.D},)")
    return op.matrix @ X


def flat_solve(op: FlatOperator, rhs: np.ndarray) -> np.ndarray:
    """Unique X with flat(X) = rhs, by LU with partial pivoting.

    Raises DegenerateStructure when the 1-norm condition estimate exceeds
    :data:`CONDITION_LIMIT`, i.e. omega^n ^ eta_1 ^ ... ^ eta_p is numerically zero.
    """
    B = op.matrix
    if not np.all(np.isfinite(B)):
        raise DegenerateStructure("flat operator has non-finite entries")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(B, check_finite=False)
    anorm = float(np.abs(B).sum(axis=0).max())
    rcond, info = dgecon(lu, anorm, norm="1")
    if info != 0 or not rcond > 1.0 / CONDITION_LIMIT:
        cond = float("inf") if rcond == 0 else 1.0 / rcond
        raise DegenerateStructure(f"flat operator is singular (condition estimate {cond:.3g})", cond)
    return scipy.linalg.lu_solve((lu, piv), np.asarray(rhs, dtype=float), check_finite=False)


def reeb_family(op: FlatOperator, etas: Sequence[np.ndarray] | None = None) -> list[np.ndarray]:
    """Reeb fields R_k: i_{R_k} omega = 0 and eta_j(R_k) = delta_jk."""
    etas = op.etas if etas is None else etas
    return [flat_solve(op, e) for e in etas]


def pairing_matrix(etas: Sequence[np.ndarray], fields: Sequence[np.ndarray]) -> np.ndarray:
    """Matrix [eta_j(R_k)]."""
    return np.array([[float(e @ r) for r in fields] for e in etas])


def is_nondegenerate(op: FlatOperator, tol: float = 1e-12) -> bool:
    """Certificate omega^n ^ eta_1 ^ ... ^ eta_p != 0, checked as |det B| > tol."""
    return abs(op.determinant()) > tol
