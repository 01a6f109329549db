"""Geometric centre of mass ``argmin_p int dist(p, x)^2 dmu(x)`` and moment diagnostics."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .ambient import GeodesicSolverParams, MetricChart, exp_map, log_map, orthonormal_frame
from .errors import ConfigError, SolverError
from .sphere import SphericalGrid
from .surface import GeometryFields, Surface, geometry


@dataclass(frozen=True)
class CenterParams:
    tol: float = 1e-12  # on |grad w| / area (a length)
    max_iter: int = 60
    armijo_c: float = 1e-4
    hessian_check: bool = True
    geodesic: GeodesicSolverParams = field(default_factory=GeodesicSolverParams)

    def __post_init__(self):
        if not self.tol > 0 or self.max_iter < 1:
            raise ConfigError("center.tol must be positive and center.max_iter >= 1")


@dataclass
class NormalPicture:
    """A surface seen in g-normal coordinates about ``p0``.

    ``y`` are the normal coordinates of the nodes, ``dmu_e`` and ``nu_e`` the
    Euclidean area weights and unit normals of the surface in those
    coordinates, ``dmu`` the Riemannian ones.
    """

    p0: np.ndarray
    frame: np.ndarray
    y: np.ndarray
    dist: np.ndarray
    weights: np.ndarray  # grid quadrature weights
    dmu: np.ndarray
    dmu_e: np.ndarray
    nu_e: np.ndarray
    log_v: np.ndarray

    @property
    def moment_g(self) -> np.ndarray:
        return np.tensordot(self.weights * self.dmu, self.y, axes=(0, 0))

    @property
    def moment_e(self) -> np.ndarray:
        return np.tensordot(self.weights * self.dmu_e, self.y, axes=(0, 0))

    @property
    def area(self) -> float:
        return float(np.sum(self.weights * self.dmu))


@dataclass
class CenterReport:
    p0: np.ndarray
    w_value: float
    grad_norm: float
    moment_g: np.ndarray
    moment_e: np.ndarray
    dist_band: float
    iterations: int
    hessian_positive: bool | None
    hessian_eigs: list | None
    area: float
    picture: NormalPicture | None = None

    def to_dict(self) -> dict:
        return {
            "p0": [float(v) for v in self.p0],
            "w_value": self.w_value,
            "grad_norm": self.grad_norm,
            "moment_g": [float(v) for v in self.moment_g],
            "moment_e": [float(v) for v in self.moment_e],
            "dist_band": self.dist_band,
            "iterations": self.iterations,
            "hessian_positive": self.hessian_positive,
            "hessian_eigs": self.hessian_eigs,
            "area": self.area,
        }


def _w_and_grad(chart, p, x, q, params, v0=None):
    V, J = log_map(chart, p, x, params, v0=v0, return_jacobian=True)
    g = chart.metric(p)
    w = float(np.sum(q * np.einsum("ka,ab,kb->k", V, g, V)))
    grad = -2.0 * np.tensordot(q, V, axes=(0, 0))  # tangent vector at p
    return w, grad, V, J, g


def normal_picture(chart: MetricChart, fields: GeometryFields, grid: SphericalGrid, p0, params=GeodesicSolverParams(), V=None, J=None) -> NormalPicture:
    p0 = np.asarray(p0, dtype=float)
    if V is None or J is None:
        V, J = log_map(chart, p0, fields.y, params, v0=V, return_jacobian=True)
    g0 = chart.metric(p0)
    F = orthonormal_frame(g0)
    Finv = F.T @ g0
    y = V @ Finv.T
    # tangents in normal coordinates: (J F)^{-1} e_i
    JF = J @ F
    et = np.linalg.solve(JF[:, None, :, :], fields.e[..., None])[..., 0]  # [K, i, 3]
    n = np.cross(et[:, 0], et[:, 1])
    nn = np.linalg.norm(n, axis=-1)
    dist = np.sqrt(np.einsum("ka,ab,kb->k", V, g0, V))
    return NormalPicture(
        p0=p0, frame=F, y=y, dist=dist, weights=grid.weights, dmu=fields.dmu,
        dmu_e=nn / grid.sin_theta, nu_e=n / nn[:, None], log_v=V,
    )


def geometric_center(chart: MetricChart, surface: Surface, grid: SphericalGrid, params: CenterParams = CenterParams(), *, fields: GeometryFields | None = None) -> CenterReport:
    """Riemannian gradient descent on ``w`` from the Euclidean centroid.

    The step ``p <- exp_p(-grad w / (2 area))`` is the fixed-point map
    ``exp_p(mean log_p x)``, safeguarded by an Armijo test on ``w``.
    """
    fields = geometry(chart, surface, grid) if fields is None else fields
    q = grid.weights * fields.dmu
    area = float(np.sum(q))
    x = fields.y
    p = np.tensordot(q, x, axes=(0, 0)) / area
    gp = params.geodesic
    w, grad, V, J, g = _w_and_grad(chart, p, x, q, gp)
    it = 0
    gnorm = float(np.sqrt(grad @ g @ grad))
    while gnorm / area > params.tol:
        if it >= params.max_iter:
            raise SolverError("geometric centre did not converge", gnorm / area)
        it += 1
        step = 1.0
        for _ in range(30):
            d = -step * grad / (2.0 * area)
            pn = exp_map(chart, p, d, gp)
            try:
                wn, gradn, Vn, Jn, gn = _w_and_grad(chart, pn, x, q, gp, v0=V - d)
            except SolverError:
                step *= 0.5
                continue
            if wn <= w - params.armijo_c * step * gnorm**2 / (2.0 * area) or gnorm / area < 1e-9:
                break
            step *= 0.5
        else:
            raise SolverError("geometric centre line search failed", gnorm / area)
        p, w, grad, V, J, g = pn, wn, gradn, Vn, Jn, gn
        gnorm = float(np.sqrt(grad @ g @ grad))
    pic = normal_picture(chart, fields, grid, p, gp, V=V, J=J)
    R = math.sqrt(area / (4.0 * math.pi))
    hpos, heigs = None, None
    if params.hessian_check:
        heigs = hessian_eigenvalues(chart, p, x, q, gp, V, h=1e-2 * R)
        hpos = bool(min(heigs) > 0)
    return CenterReport(
        p0=p,
        w_value=w,
        grad_norm=gnorm,
        moment_g=pic.moment_g,
        moment_e=pic.moment_e,
        dist_band=float(np.max(np.abs(pic.dist - R))),
        iterations=it,
        hessian_positive=hpos,
        hessian_eigs=heigs,
        area=area,
        picture=pic,
    )


def hessian_eigenvalues(chart, p, x, q, params, V, h):
    """Eigenvalues of the coordinate Hessian of ``w`` at ``p`` (centred differences of dw)."""
    cols = []
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        dws = []
        for sgn in (1.0, -1.0):
            ps = p + sgn * e
            _, grad, _, _, g = _w_and_grad(chart, ps, x, q, params, v0=V - sgn * e)
            dws.append(g @ grad)  # covector dw
        cols.append((dws[0] - dws[1]) / (2 * h))
    Hm = np.array(cols)
    Hm = 0.5 * (Hm + Hm.T)
    g = chart.metric(p)
    # eigenvalues of the (1,1) tensor g^{-1} Hess, i.e. in an orthonormal frame
    F = orthonormal_frame(g)
    return [float(v) for v in np.linalg.eigvalsh(F.T @ Hm @ F)]


def moment_suite(picture: NormalPicture, R: float, ks=(0, 1)) -> dict:
    """Max ``|int prod dmu^E|`` over distinct products of ``2k+1`` factors from ``{nu^E_a, y_a / R}``.

    Returns ``{degree: max magnitude}``.
    """
    factors = [picture.nu_e[:, a] for a in range(3)] + [picture.y[:, a] / R for a in range(3)]
    wq = picture.weights * picture.dmu_e
    out = {}
    for k in ks:
        deg = 2 * k + 1
        best = 0.0
        for combo in itertools.combinations_with_replacement(range(6), deg):
            prod = np.ones_like(wq)
            for c in combo:
                prod = prod * factors[c]
            best = max(best, abs(float(np.sum(wq * prod))))
        out[deg] = best
    return out


def diameter(chart: MetricChart, fields: GeometryFields, picture: NormalPicture, params=GeodesicSolverParams(), n_candidates: int = 12) -> float:
    """Ambient diameter of the node set.

    Candidate farthest pairs come from normal coordinates (where the metric is
    Euclidean up to O(R^2)); the candidates are then measured with geodesics.
    """
    y = picture.y
    sq = np.sum(y * y, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * y @ y.T
    far = np.argmax(d2, axis=1)
    vals = d2[np.arange(len(y)), far]
    order = np.argsort(-vals, kind="stable")[:n_candidates]
    X = fields.y
    P, Q = X[order], X[far[order]]
    v = log_map(chart, P, Q, params)
    g = chart.metric(P)
    return float(np.max(np.sqrt(np.einsum("ka,kab,kb->k", v, g, v))))
