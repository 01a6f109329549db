"""Willmore energy, companion integrals and the constrained Euler-Lagrange operator.

Variation convention: for a normal speed ``f`` along the outward normal,
``d/dt dmu = H f dmu`` and ``d/dt H = -Lap f - (|A|^2 + Ric(nu, nu)) f``.  Hence

    d/dt W    = -1/2 int (Lap H + H |Acirc|^2 + H Ric(nu, nu)) f dmu
    d/dt area =  int H f dmu

and surfaces with ``G + lambda H = 0``, ``G = Lap H + H |Acirc|^2 + H Ric(nu, nu)``,
are exactly the critical points of ``W`` at fixed area.  The steepest-descent
normal speed for ``W`` at fixed area is therefore ``f = +(G + lambda* H)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .ambient import MetricChart
from .errors import DegeneracyError
from .sphere import SphericalGrid
from .surface import GeometryFields, Surface, geometry, integrate, laplace_beltrami

REPORT_FIELDS = ("area", "R", "W", "U", "V", "gb_residual", "lambda", "el_l2")


@dataclass
class FunctionalReport:
    area: float
    R: float
    W: float
    U: float
    V: float
    gb_residual: float
    lambda_opt: float
    el_l2: float

    def as_row(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lambda_opt")
        return {k: d[k] for k in REPORT_FIELDS}


def el_operator(fields: GeometryFields, grid: SphericalGrid):
    """``G = Lap H + H |Acirc|^2 + H Ric(nu, nu)`` at the nodes."""
    H = fields.H
    return laplace_beltrami(fields, grid, H) + H * fields.Acirc_norm2 + H * fields.ric_nn


def lambda_from_fields(fields: GeometryFields, grid: SphericalGrid, G=None) -> float:
    G = el_operator(fields, grid) if G is None else G
    den = integrate(fields, grid, fields.H**2)
    if not den > 0:
        raise DegeneracyError("int H^2 dmu vanishes; lambda is undefined")
    return float(-integrate(fields, grid, G * fields.H) / den)


def report_from_fields(fields: GeometryFields, grid: SphericalGrid) -> FunctionalReport:
    area = fields.area
    W = 0.25 * float(integrate(fields, grid, fields.H**2))
    U = float(integrate(fields, grid, fields.Acirc_norm2))
    V = float(integrate(fields, grid, fields.ric_nn - 0.5 * fields.sc))
    G = el_operator(fields, grid)
    lam = lambda_from_fields(fields, grid, G)
    res = G + lam * fields.H
    return FunctionalReport(
        area=area,
        R=math.sqrt(area / (4.0 * math.pi)),
        W=W,
        U=U,
        V=V,
        gb_residual=W - 4.0 * math.pi - 0.5 * U - V,
        lambda_opt=lam,
        el_l2=float(np.sqrt(integrate(fields, grid, res**2))),
    )


def evaluate(chart: MetricChart, surface: Surface, grid: SphericalGrid) -> FunctionalReport:
    return report_from_fields(geometry(chart, surface, grid), grid)


def el_residual(chart: MetricChart, surface: Surface, grid: SphericalGrid, lam: float):
    """Pointwise ``G + lambda H`` and its ``L^2(dmu)`` norm."""
    fields = geometry(chart, surface, grid)
    res = el_operator(fields, grid) + lam * fields.H
    return res, float(np.sqrt(integrate(fields, grid, res**2)))


def optimal_lambda(chart: MetricChart, surface: Surface, grid: SphericalGrid) -> float:
    """``lambda* = -int G H dmu / int H^2 dmu`` (L^2 projection)."""
    return lambda_from_fields(geometry(chart, surface, grid), grid)
