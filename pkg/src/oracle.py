"""
H2SGNN Oracle

Explicit non-commutative polynomials over meta-path adjacencies. Used to check
that powers of the beta-weighted global operator expand into every word of
length k, and to count filter parameters per model family.
"""

import itertools
import logging
import math
from enum import Enum
from typing import Dict, List, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.errors import ArgumentError, ShapeError
from src.filters import FilterBasis, SparseOperator, propagate_basis
from src.model import global_operator
from src.sparse import CsrMatrix, spmm, sym_normalize

logger = logging.getLogger(__name__)

Word = Tuple[int, ...]


class ParamVariant(str, Enum):
    """Model families whose filter parameter counts are compared"""
    PSHGCN = "pshgcn"
    LOCAL = "local"
    GLOBAL = "global"
    FULL = "full"


class NcPolyTerm(BaseModel):
    """coeff * A_{w_1} A_{w_2} ... A_{w_len}; the empty word is the identity"""
    model_config = ConfigDict(frozen=True)

    word: Word
    coeff: float


class NcPolynomial(BaseModel):
    """Sum of terms, one per distinct word, lexicographically ordered"""
    model_config = ConfigDict(frozen=True)

    num_matrices: int = Field(ge=1)
    max_degree: int = Field(ge=0)
    terms: List[NcPolyTerm]

    @model_validator(mode="after")
    def _check_words(self) -> "NcPolynomial":
        words = [t.word for t in self.terms]
        if len(set(words)) != len(words):
            raise ArgumentError("duplicate words in polynomial")
        if words != sorted(words):
            raise ArgumentError("polynomial terms must be sorted by word")
        for w in words:
            if len(w) > self.max_degree:
                raise ArgumentError(f"word {w} longer than degree {self.max_degree}")
            if any(i < 1 or i > self.num_matrices for i in w):
                raise ArgumentError(f"word {w} uses a matrix outside 1..{self.num_matrices}")
        return self

    @classmethod
    def from_terms(cls, terms: Sequence[Tuple[Sequence[int], float]], num_matrices: int, max_degree: int) -> "NcPolynomial":
        """Canonicalize (word, coeff) pairs: repeated words are summed, words sorted"""
        merged: Dict[Word, float] = {}
        for word, coeff in terms:
            word = tuple(int(i) for i in word)
            merged[word] = merged.get(word, 0.0) + float(coeff)
        return cls(
            num_matrices=num_matrices,
            max_degree=max_degree,
            terms=[NcPolyTerm(word=w, coeff=c) for w, c in sorted(merged.items())],
        )

    def coefficient(self, word: Sequence[int]) -> float:
        word = tuple(word)
        for t in self.terms:
            if t.word == word:
                return t.coeff
        return 0.0


def _check_sizes(num_matrices: int, max_degree: int) -> None:
    if num_matrices < 1 or max_degree < 0:
        raise ArgumentError(f"need R >= 1 and K >= 0, got R={num_matrices}, K={max_degree}")


def _parse_variant(variant) -> ParamVariant:
    try:
        return ParamVariant(str(getattr(variant, "value", variant)).lower())
    except ValueError:
        raise ArgumentError(
            f"unknown variant '{variant}', expected one of {[v.value for v in ParamVariant]}"
        ) from None


def enumerate_words(num_matrices: int, max_degree: int) -> List[Word]:
    """All words over 1..R of length 0..K, shortest first"""
    _check_sizes(num_matrices, max_degree)
    alphabet = range(1, num_matrices + 1)
    return [w for k in range(max_degree + 1) for w in itertools.product(alphabet, repeat=k)]


def count_terms_mnc(num_matrices: int, max_degree: int) -> int:
    """Number of words of length 0..K over R letters"""
    _check_sizes(num_matrices, max_degree)
    if num_matrices == 1:
        return max_degree + 1
    return (num_matrices ** (max_degree + 1) - 1) // (num_matrices - 1)


def count_params(variant, num_matrices: int, max_degree: int) -> int:
    """Learnable filter coefficients of a model family"""
    variant = _parse_variant(variant)
    _check_sizes(num_matrices, max_degree)
    R, K = num_matrices, max_degree
    if variant == ParamVariant.PSHGCN:
        return count_terms_mnc(R, K)
    if variant == ParamVariant.LOCAL:
        return R * (K + 1)
    if variant == ParamVariant.GLOBAL:
        return R + K + 1
    return R * (K + 1) + R + K + 1


def count_terms(variant, num_matrices: int, max_degree: int) -> int:
    """Propagated terms a model family keeps in memory"""
    variant = _parse_variant(variant)
    _check_sizes(num_matrices, max_degree)
    R, K = num_matrices, max_degree
    if variant == ParamVariant.PSHGCN:
        return count_terms_mnc(R, K)
    if variant == ParamVariant.LOCAL:
        return R * (K + 1)
    if variant == ParamVariant.GLOBAL:
        return K + 1
    return (R + 1) * (K + 1)


class EfficiencyRow(BaseModel):
    """Counts for one model family at one order"""
    K: int
    variant: str
    parameters: int
    terms: int
    panel_bytes: int


def efficiency_table(
    variants: Sequence, num_matrices: int, orders: Sequence[int], num_nodes: int, hidden_dim: int
) -> List[EfficiencyRow]:
    """One row per (order, family); panel_bytes is terms * nodes * hidden float64 values"""
    if num_nodes < 1 or hidden_dim < 1:
        raise ArgumentError(f"need nodes >= 1 and hidden >= 1, got {num_nodes} and {hidden_dim}")
    parsed = [_parse_variant(v) for v in variants]
    rows = []
    for K in orders:
        for v in parsed:
            terms = count_terms(v, num_matrices, K)
            rows.append(
                EfficiencyRow(
                    K=K,
                    variant=v.value,
                    parameters=count_params(v, num_matrices, K),
                    terms=terms,
                    panel_bytes=terms * num_nodes * hidden_dim * np.dtype(np.float64).itemsize,
                )
            )
    return rows


def expand_global_power(beta: Sequence[float], k: int) -> NcPolynomial:
    """(sum_i beta_i A_i)^k as a sum over all R^k words of length k"""
    if k < 0:
        raise ArgumentError(f"power must be >= 0, got {k}")
    R = len(beta)
    if R < 1:
        raise ArgumentError("beta is empty")
    terms = [
        NcPolyTerm(word=word, coeff=math.prod(beta[i - 1] for i in word))
        for word in itertools.product(range(1, R + 1), repeat=k)
    ]
    return NcPolynomial(num_matrices=R, max_degree=k, terms=terms)


def eval_ncpoly(poly: NcPolynomial, matrices: Sequence[CsrMatrix], x) -> np.ndarray:
    """sum_t coeff_t * A_{w_1} ... A_{w_L} x, applied right to left"""
    if len(matrices) != poly.num_matrices:
        raise ArgumentError(f"polynomial uses {poly.num_matrices} matrices, got {len(matrices)}")
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    for m in matrices:
        if m.shape != (n, n):
            raise ShapeError(f"matrix of shape {m.shape} does not act on {x.shape}")

    out = np.zeros_like(x)
    for term in poly.terms:
        v = x
        for i in reversed(term.word):
            v = spmm(matrices[i - 1], v)
        out += term.coeff * v
    return out


def random_operators(num_matrices: int, n: int, seed: int = 0, density: float = 0.3) -> List[CsrMatrix]:
    """Symmetric, normalized random adjacencies"""
    rng = np.random.default_rng(seed)
    mats = []
    for _ in range(num_matrices):
        a = sp.random(n, n, density=density, random_state=rng, format="csr")
        mats.append(sym_normalize(CsrMatrix.from_scipy(a + a.T)))
    return mats


class ExpansionReport(BaseModel):
    """Max relative error per power k between the lazy operator and the word expansion"""
    orders: Dict[int, float]
    tolerance: float
    passed: bool


def verify_global_expansion(
    matrices: Sequence[CsrMatrix],
    beta: Sequence[float],
    max_degree: int,
    trials: int = 3,
    tol: float = 1e-10,
    seed: int = 0,
) -> ExpansionReport:
    """Compare (sum_i beta_i A_i)^k x with the explicit word sum for k = 0..K"""
    if not matrices:
        raise ArgumentError("need at least one matrix")
    if tol <= 0:
        raise ArgumentError(f"tolerance must be positive, got {tol}")
    n = matrices[0].n_rows
    rng = np.random.default_rng(seed)
    op = global_operator([SparseOperator(m) for m in matrices], list(beta))
    polys = [expand_global_power(beta, k) for k in range(max_degree + 1)]

    worst = {k: 0.0 for k in range(max_degree + 1)}
    for _ in range(trials):
        x = rng.standard_normal((n, 2))
        stack = propagate_basis(FilterBasis(), op, x, max_degree)
        for k, poly in enumerate(polys):
            expected = eval_ncpoly(poly, matrices, x)
            scale = max(np.linalg.norm(expected), 1e-12)
            err = np.linalg.norm(stack.terms[k] - expected) / scale
            worst[k] = max(worst[k], float(err))

    passed = all(e <= tol for e in worst.values())
    logger.info("global expansion R=%d K=%d: %s", len(matrices), max_degree, "ok" if passed else "FAILED")
    return ExpansionReport(orders=worst, tolerance=tol, passed=passed)


def main():
    """Show the parameter gap between explicit and weighted-sum polynomials"""
    from rich.console import Console
    from rich.table import Table

    console = Console()
    table = Table(title="Filter parameters")
    table.add_column("R", justify="right")
    table.add_column("K", justify="right")
    for variant in ParamVariant:
        table.add_column(variant.value, justify="right")
    for R in (2, 3, 4):
        for K in (2, 5, 10):
            table.add_row(str(R), str(K), *[str(count_params(v, R, K)) for v in ParamVariant])
    console.print(table)

    report = verify_global_expansion(random_operators(3, 8), [0.5, -0.3, 0.8], 4)
    console.print(f"✅ expansion check passed: {report.passed}")


if __name__ == "__main__":
    main()
