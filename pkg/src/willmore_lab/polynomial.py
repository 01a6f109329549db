"""Trivariate polynomials with exact partial derivatives.

Used for the conformal factor of conformally flat test metrics.
"""

from __future__ import annotations

import itertools
from functools import cached_property

import numpy as np


class Polynomial3:
    """Sum of monomials ``c * y1**i * y2**j * y3**k``.

    ``terms`` maps exponent triples to coefficients.
    """

    def __init__(self, terms: dict[tuple[int, int, int], float] | None = None):
        clean = {}
        for exps, coef in (terms or {}).items():
            exps = tuple(int(e) for e in exps)
            if len(exps) != 3 or min(exps) < 0:
                raise ValueError(f"bad exponent triple {exps!r}")
            if coef != 0.0:
                clean[exps] = clean.get(exps, 0.0) + float(coef)
        self.terms = clean

    def __repr__(self):
        return f"Polynomial3({self.terms!r})"

    def __eq__(self, other):
        return isinstance(other, Polynomial3) and self.terms == other.terms

    def __hash__(self):
        return hash(tuple(sorted(self.terms.items())))

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def is_zero(self) -> bool:
        return not self.terms

    def diff(self, axis: int) -> "Polynomial3":
        out = {}
        for exps, coef in self.terms.items():
            if exps[axis] == 0:
                continue
            new = list(exps)
            new[axis] -= 1
            out[tuple(new)] = coef * exps[axis]
        return Polynomial3(out)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape[:-1])
        if not self.terms:
            return out
        deg = self.degree
        powers = [np.ones((deg + 1,) + y.shape[:-1]) for _ in range(3)]
        for a in range(3):
            for p in range(1, deg + 1):
                powers[a][p] = powers[a][p - 1] * y[..., a]
        for (i, j, k), coef in self.terms.items():
            out = out + coef * powers[0][i] * powers[1][j] * powers[2][k]
        return out

    @cached_property
    def _derivative_table(self):
        table = {(): self}
        for order in range(1, 5):
            for idx in itertools.product(range(3), repeat=order):
                key = tuple(sorted(idx))
                if key not in table:
                    table[key] = table[key[:-1]].diff(key[-1])
        return table

    def derivatives(self, y, order: int = 2):
        """Return ``[f, df, d2f, ...]`` up to ``order`` (at most 4).

        ``d2f[..., a, b]`` is the partial derivative along axes a then b.
        """
        if order > 4:
            raise ValueError("derivatives above order 4 are not tabulated")
        y = np.asarray(y, dtype=float)
        lead = y.shape[:-1]
        table = self._derivative_table
        cache = {}

        def value(key):
            if key not in cache:
                poly = table[key]
                cache[key] = poly(y) if not poly.is_zero() else np.zeros(lead)
            return cache[key]

        out = [value(())]
        for k in range(1, order + 1):
            arr = np.empty(lead + (3,) * k)
            for idx in itertools.product(range(3), repeat=k):
                arr[(...,) + idx] = value(tuple(sorted(idx)))
            out.append(arr)
        return out

    def to_config(self) -> list:
        return [[list(e), c] for e, c in sorted(self.terms.items())]

    @classmethod
    def from_config(cls, spec) -> "Polynomial3":
        """Accept ``{"i,j,k": c}`` / ``{(i,j,k): c}`` mappings or ``[[i,j,k], c]`` lists."""
        terms = {}
        if isinstance(spec, dict):
            items = spec.items()
        else:
            items = [(e, c) for e, c in spec]
        for exps, coef in items:
            if isinstance(exps, str):
                exps = tuple(int(s) for s in exps.replace(" ", "").split(","))
            terms[tuple(exps)] = terms.get(tuple(exps), 0.0) + float(coef)
        return cls(terms)
