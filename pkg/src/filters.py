"""
H2SGNN Polynomial Filters

Monomial, Jacobi and Legendre bases propagated by recurrence. Propagation only
ever calls the operator on n x d panels, so the same code runs on numpy arrays
(analysis, oracle) and on torch tensors (the model, under autograd).
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from src.errors import ArgumentError, DomainError
from src.sparse import CsrMatrix, spmm

# v -> M v on an n x d panel
LinearOperator = Callable[[Any], Any]


class BasisKind(str, Enum):
    """Polynomial bases"""
    MONOMIAL = "monomial"
    JACOBI = "jacobi"
    LEGENDRE = "legendre"


BASIS_ALIASES = {
    "gprgnn": BasisKind.MONOMIAL,
    "gpr": BasisKind.MONOMIAL,
    "power": BasisKind.MONOMIAL,
}


class FilterBasis(BaseModel):
    """A polynomial basis; a and b only matter for Jacobi"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: BasisKind = BasisKind.MONOMIAL
    a: float = 1.0
    b: float = 1.0

    @model_validator(mode="before")
    @classmethod
    def _from_name(cls, data):
        if isinstance(data, (str, BasisKind)):
            return {"kind": data}
        return data

    @field_validator("kind", mode="before")
    @classmethod
    def _normalize_kind(cls, value):
        if isinstance(value, str) and not isinstance(value, BasisKind):
            value = value.strip().lower()
            return BASIS_ALIASES.get(value, value)
        return value

    @model_validator(mode="after")
    def _check_jacobi_domain(self) -> "FilterBasis":
        if self.kind == BasisKind.JACOBI and (self.a <= -1 or self.b <= -1):
            raise DomainError(f"Jacobi basis needs a > -1 and b > -1, got a={self.a}, b={self.b}")
        return self

    @classmethod
    def legendre(cls) -> "FilterBasis":
        return cls(kind=BasisKind.LEGENDRE)

    @classmethod
    def jacobi(cls, a: float = 1.0, b: float = 1.0) -> "FilterBasis":
        return cls(kind=BasisKind.JACOBI, a=a, b=b)

    def label(self) -> str:
        if self.kind == BasisKind.JACOBI:
            return f"jacobi(a={self.a:g},b={self.b:g})"
        return self.kind.value


@dataclass
class BasisStack:
    """terms[k] = basis_k(operator) x for k = 0..order"""
    order: int
    terms: List[Any] = field(default_factory=list)


class SparseOperator:
    """Applies a CsrMatrix to numpy panels"""

    def __init__(self, matrix: CsrMatrix):
        self.matrix = matrix

    @property
    def shape(self) -> tuple:
        return self.matrix.shape

    def __call__(self, v):
        return spmm(self.matrix, v)


def jacobi_coefficients(k: int, a: float, b: float) -> Tuple[float, float, float]:
    """(c_x, c_1, c_2) with P_k = c_x M P_{k-1} + c_1 P_{k-1} - c_2 P_{k-2}, k >= 2"""
    s = 2 * k + a + b
    denom = 2 * k * (k + a + b) * (s - 2)
    c_x = (s - 1) * s * (s - 2) / denom
    c_1 = (s - 1) * (a * a - b * b) / denom
    c_2 = 2 * (k + a - 1) * (k + b - 1) * s / denom
    return c_x, c_1, c_2


def propagate_basis(basis: FilterBasis, apply: LinearOperator, x, order: int) -> BasisStack:
    """Propagate x through the first order+1 basis polynomials of an operator"""
    if order < 0:
        raise ArgumentError(f"order must be >= 0, got {order}")
    terms = [x]
    if order == 0:
        return BasisStack(order=0, terms=terms)

    if basis.kind == BasisKind.MONOMIAL:
        for _ in range(order):
            terms.append(apply(terms[-1]))

    elif basis.kind == BasisKind.LEGENDRE:
        terms.append(apply(x))
        # standard three-term form: (k+1) P_{k+1} = (2k+1) M P_k - k P_{k-1}
        for k in range(1, order):
            terms.append(((2 * k + 1) * apply(terms[k]) - k * terms[k - 1]) / (k + 1))

    else:
        a, b = basis.a, basis.b
        terms.append((0.5 * a - 0.5 * b) * x + (0.5 * a + 0.5 * b + 1) * apply(x))
        for k in range(2, order + 1):
            c_x, c_1, c_2 = jacobi_coefficients(k, a, b)
            prev = terms[k - 1]
            terms.append(c_x * apply(prev) + c_1 * prev - c_2 * terms[k - 2])

    return BasisStack(order=order, terms=terms)


def contract(stack: BasisStack, coeffs) -> Any:
    """sum_k coeffs[k] * terms[k]"""
    if len(coeffs) != stack.order + 1:
        raise ArgumentError(f"{len(coeffs)} coefficients for a stack of order {stack.order}")
    out = coeffs[0] * stack.terms[0]
    for k in range(1, stack.order + 1):
        out = out + coeffs[k] * stack.terms[k]
    return out


def basis_values(basis: FilterBasis, xs: Sequence[float], order: int) -> np.ndarray:
    """Scalar basis polynomials at points xs, shape (order+1, len(xs))"""
    xs = np.asarray(xs, dtype=np.float64).reshape(-1, 1)
    stack = propagate_basis(basis, lambda v: xs * v, np.ones_like(xs), order)
    return np.hstack(stack.terms).T


def frequency_response(
    basis: FilterBasis,
    coeffs: Sequence[float],
    laplacian_eigenvalue_samples: Sequence[float],
) -> List[Tuple[float, float]]:
    """h(lambda) = sum_k coeffs[k] basis_k(1 - lambda) for lambda in [0, 2]"""
    if len(coeffs) == 0:
        raise ArgumentError("frequency_response needs at least one coefficient")
    lambdas = np.asarray(laplacian_eigenvalue_samples, dtype=np.float64)
    if not np.all((lambdas >= 0) & (lambdas <= 2)):
        raise DomainError("Laplacian eigenvalues must be finite and lie in [0, 2]")
    values = basis_values(basis, 1.0 - lambdas, len(coeffs) - 1)
    response = np.asarray(coeffs, dtype=np.float64) @ values
    return [(float(lam), float(h)) for lam, h in zip(lambdas, response)]
