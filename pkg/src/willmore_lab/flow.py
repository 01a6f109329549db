"""Geodesic-sphere initialisation and area-constrained Willmore solves.

``minimize`` runs two phases:

1. Armijo-controlled L^2 gradient descent on the radial coefficients along the
   normal speed ``f = G + lambda* H`` (the steepest-descent direction for W at
   fixed area under the convention documented in ``functionals``), followed by
   exact area restoration through uniform radial scaling.
2. A damped Newton (chord) iteration on the Galerkin form of the
   Euler-Lagrange system.  Plain descent is stiff like ``L^4`` and, when the
   scalar curvature has a local minimum, the critical surfaces are saddles of W
   in the translation directions, so descent alone cannot reach them.

Newton unknowns are the centre ``c``, the radial coefficients with ``l != 1``
and ``lambda``; the ``l = 1`` coefficients are held as a gauge because they
duplicate translations.  Equations: ``int (G + lambda H) Y_lm (omega . nu_flat) dmu``
for ``l != 1``, ``int (G + lambda H) nu_flat dmu`` for the centre and the area
constraint.  In homogeneous charts the centre is frozen and its equations are
dropped.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .ambient import GeodesicSolverParams, MetricChart, log_map
from .errors import ConfigError, DegeneracyError, DomainError, SolverError
from .functionals import el_operator, lambda_from_fields
from .sphere import SphericalGrid, lm_arrays
from .surface import GeometryFields, Surface, geometry, integrate

TRACE_FIELDS = ("step", "phase", "W", "area", "lambda", "scaled_residual", "galerkin_residual", "step_size")


@dataclass
class FlowParams:
    target_area: float
    initial_step: float = 2e-5  # descent time step is initial_step * R^4
    max_steps: int = 300
    el_tol: float = 1e-11  # on the Galerkin residual, scaled like el_l2 * R^2
    armijo_c: float = 1e-4
    shrink: float = 0.5
    grow: float = 1.5
    area_newton_tol: float = 1e-13
    descent_steps: int = 20
    filter_every: int = 50
    filter_degree: int | None = None  # default floor(2L/3)
    newton: bool = True
    newton_fd_step: float = 1e-5
    center_fd_step: float = 0.05

    def __post_init__(self):
        for name in ("target_area", "initial_step", "el_tol", "armijo_c", "shrink", "grow", "area_newton_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"flow.{name} must be positive")
        if not self.armijo_c < 1:
            raise ConfigError("flow.armijo_c must be < 1")
        if not self.shrink < 1 or not self.grow >= 1:
            raise ConfigError("flow.shrink must be < 1 and flow.grow >= 1")
        if self.max_steps < 0 or self.descent_steps < 0:
            raise ConfigError("flow step counts must be non-negative")

    @property
    def R(self) -> float:
        return math.sqrt(self.target_area / (4.0 * math.pi))


@dataclass
class FlowTrace:
    records: list = field(default_factory=list)
    status: str = "running"
    message: str = ""

    def add(self, **rec):
        self.records.append({k: rec[k] for k in TRACE_FIELDS})

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=TRACE_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in self.records:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()


# ---------------------------------------------------------------------------
# initialisation


def geodesic_sphere(
    chart: MetricChart,
    p0,
    r: float,
    grid: SphericalGrid,
    params: GeodesicSolverParams = GeodesicSolverParams(),
    *,
    return_fit_error: bool = False,
    tol: float = 1e-13,
):
    """The set ``{x : dist(p0, x) = r}`` as a radial graph about ``p0``.

    For each grid direction the chart radius with ``|log_{p0}(p0 + rho omega)|_g = r``
    is found by Newton using the geodesic Jacobian.
    """
    p0 = np.asarray(p0, dtype=float)
    if not r < 0.25 * chart.valid_radius:
        raise DomainError("geodesic sphere radius must be below valid_radius / 4")
    om = grid.unit_sphere()["f"]
    g0 = chart.metric(p0)
    rho = r / np.sqrt(np.einsum("ka,ab,kb->k", om, g0, om))
    v = None
    prev = math.inf
    for _ in range(30):
        q = p0 + rho[:, None] * om
        v, J = log_map(chart, p0, q, params, v0=v, return_jacobian=True)
        gv = v @ g0
        nv = np.sqrt(np.einsum("ka,ka->k", gv, v))
        dv = np.linalg.solve(J, om[..., None])[..., 0]
        slope = np.einsum("ka,ka->k", gv, dv) / nv
        step = (nv - r) / slope
        rho = rho - step
        size = float(np.max(np.abs(step)))
        if size <= tol * r:
            break
        if size <= 1e-11 * r and size > 0.5 * prev:
            break  # stagnated at the shooting round-off floor
        prev = size
    else:
        raise SolverError("geodesic sphere radius iteration did not converge", float(np.max(np.abs(step))))
    coeffs = grid.analyze(rho)
    surf = Surface(p0.copy(), coeffs)
    if return_fit_error:
        fit = grid.synthesize(coeffs)["f"] - rho
        return surf, float(np.sqrt(grid.integrate_sphere(fit**2) / (4 * math.pi)))
    return surf


# ---------------------------------------------------------------------------
# helpers


def _state(chart, surface, grid):
    fields = geometry(chart, surface, grid)
    G = el_operator(fields, grid)
    lam = lambda_from_fields(fields, grid, G)
    return fields, G, lam


def _willmore(fields, grid):
    return 0.25 * float(integrate(fields, grid, fields.H**2))


def _scaled_residual(fields, grid, G, lam, R):
    """``||G + lambda H||_L2 R^2``: dimensionless since G ~ R^-3 and area ~ R^2.

    A centre offset ``d`` contributes about ``d`` to the L^2 norm, so this
    pins the translation mode to ``d ~ el_tol / R^2``.
    """
    res = G + lam * fields.H
    return float(np.sqrt(integrate(fields, grid, res**2))) * R**2


def restore_area(chart, surface, grid, target, tol, max_iter=50):
    """Uniformly rescale ``rho`` about the centre until the area hits ``target``."""
    s = surface
    for _ in range(max_iter):
        a = geometry(chart, s, grid).area
        if abs(a - target) <= tol * target:
            return s
        # area ~ s^2 for small surfaces; Newton in log(scale)
        s = s.scaled(math.sqrt(target / a))
    raise SolverError("area restoration did not converge", abs(a - target) / target)


# ---------------------------------------------------------------------------
# Galerkin Newton system


class _NewtonSystem:
    def __init__(self, chart, surface, grid, params: FlowParams, free_center: bool):
        self.chart = chart
        self.grid = grid
        self.params = params
        self.R = params.R
        self.free_center = free_center
        ls, _ = lm_arrays(surface.L)
        self.free = np.flatnonzero(ls != 1)
        self.gauge = surface.coeffs.copy()
        self.L = surface.L

    def pack(self, surface, lam):
        R = self.R
        parts = []
        if self.free_center:
            parts.append(surface.center / R)
        parts.append(surface.coeffs[self.free] / R)
        parts.append([lam * R * R])
        return np.concatenate(parts)

    def unpack(self, x, center0):
        R = self.R
        i = 0
        if self.free_center:
            c = x[:3] * R
            i = 3
        else:
            c = center0
        a = self.gauge.copy()
        a[self.free] = x[i : i + self.free.size] * R
        lam = x[-1] / (R * R)
        return Surface(c, a), lam

    def residual(self, surface, lam):
        fields = geometry(self.chart, surface, self.grid)
        G = el_operator(fields, self.grid)
        return self.residual_from(fields, G, lam), fields, G

    def residual_from(self, fields, G, lam):
        r = G + lam * fields.H
        align = np.einsum("ka,ka->k", fields.dirs, fields.nu_flat)
        Fall = self.grid.analyze(r * align * fields.dmu, self.L)
        parts = []
        if self.free_center:
            parts.append(np.tensordot(fields.quad * r, fields.nu_flat, axes=(0, 0)) * self.R)
        parts.append(Fall[self.free] * self.R)
        parts.append([(fields.area - self.params.target_area) / self.R**2])
        return np.concatenate(parts)

    def jacobian(self, x, F0, center0):
        n = x.size
        J = np.empty((F0.size, n))
        h = self.params.newton_fd_step
        hc = self.params.center_fd_step
        for j in range(n):
            if self.free_center and j < 3:
                xp = x.copy()
                xm = x.copy()
                xp[j] += hc
                xm[j] -= hc
                Fp = self.residual(*self.unpack(xp, center0))[0]
                Fm = self.residual(*self.unpack(xm, center0))[0]
                J[:, j] = (Fp - Fm) / (2 * hc)
            else:
                xp = x.copy()
                xp[j] += h
                J[:, j] = (self.residual(*self.unpack(xp, center0))[0] - F0) / h
        return J


# ---------------------------------------------------------------------------
# driver


def minimize(chart: MetricChart, init: Surface, params: FlowParams, grid: SphericalGrid, *, free_center: bool | None = None):
    """Return ``(surface, trace)``; ``trace.status`` is converged, max_steps or degenerate.

    Convergence means the Galerkin residual (the discrete Euler-Lagrange
    equations, scaled like ``scaled_residual``) is at most ``el_tol``.  The
    pointwise ``scaled_residual`` additionally contains the part of
    ``G + lambda H`` above degree L, which no degree-L surface can remove; it
    is recorded as a discretisation indicator.  With ``newton = False`` the
    pointwise residual is the criterion.
    """
    trace = FlowTrace()
    R = params.R
    L_cut = params.filter_degree if params.filter_degree is not None else (2 * init.L) // 3
    if free_center is None:
        free_center = not chart.homogeneous
    step_count = 0
    best = init
    nan = float("nan")
    try:
        surf = restore_area(chart, init, grid, params.target_area, params.area_newton_tol)
        system = _NewtonSystem(chart, surf, grid, params, free_center)
        fields, G, lam = _state(chart, surf, grid)
        W = _willmore(fields, grid)
        res = _scaled_residual(fields, grid, G, lam, R)
        gal = float(np.linalg.norm(system.residual_from(fields, G, lam)))

        def done():
            return (gal if params.newton else res) <= params.el_tol

        best = surf
        trace.add(step=0, phase="init", W=W, area=fields.area, **{"lambda": lam}, scaled_residual=res, galerkin_residual=gal, step_size=0.0)
        dt = params.initial_step * R**4

        # phase 1: projected L2 gradient descent with Armijo backtracking
        while not done() and step_count < min(params.descent_steps, params.max_steps):
            f = G + lam * fields.H
            align = np.einsum("ka,ka->k", fields.dirs, fields.nu_flat)
            drho = grid.analyze(f / align, surf.L)
            slope = 0.5 * float(integrate(fields, grid, f * f))
            accepted = False
            for _ in range(40):
                trial = Surface(surf.center, surf.coeffs + dt * drho)
                try:
                    trial = restore_area(chart, trial, grid, params.target_area, params.area_newton_tol)
                    tf, tG, tlam = _state(chart, trial, grid)
                except (DegeneracyError, DomainError, SolverError):
                    dt *= params.shrink
                    continue
                tW = _willmore(tf, grid)
                if tW <= W - params.armijo_c * dt * slope:
                    accepted = True
                    break
                dt *= params.shrink
            if not accepted:
                break
            step_count += 1
            surf, fields, G, lam, W = trial, tf, tG, tlam, tW
            if params.filter_every and step_count % params.filter_every == 0:
                surf = restore_area(chart, surf.filtered(L_cut), grid, params.target_area, params.area_newton_tol)
                fields, G, lam = _state(chart, surf, grid)
                W = _willmore(fields, grid)
            res = _scaled_residual(fields, grid, G, lam, R)
            gal = float(np.linalg.norm(system.residual_from(fields, G, lam))) if params.newton else nan
            best = surf
            trace.add(step=step_count, phase="descent", W=W, area=fields.area, **{"lambda": lam}, scaled_residual=res, galerkin_residual=gal, step_size=dt)
            dt *= params.grow

        # phase 2: damped chord-Newton on the Galerkin system
        if params.newton and not done():
            system = _NewtonSystem(chart, surf, grid, params, free_center)
            center0 = surf.center.copy()
            x = system.pack(surf, lam)
            F, fields, G = system.residual(surf, lam)
            J = None
            stalls = 0
            while not done() and step_count < params.max_steps:
                if J is None:
                    J = system.jacobian(x, F, center0)
                # column equilibration: translation columns are ~R^4 while
                # high-degree shape columns grow like l^4, and without it the
                # default lstsq cutoff discards the translation directions
                cn = np.linalg.norm(J, axis=0)
                cn[cn == 0] = 1.0
                dx = np.linalg.lstsq(J / cn, -F, rcond=None)[0] / cn
                nF = np.linalg.norm(F)
                alpha = 1.0
                ok = False
                for _ in range(12):
                    xt = x + alpha * dx
                    try:
                        st, lt = system.unpack(xt, center0)
                        Ft, ft, Gt = system.residual(st, lt)
                    except (DegeneracyError, DomainError):
                        alpha *= 0.5
                        continue
                    if np.linalg.norm(Ft) < (1 - 1e-4 * alpha) * nF:
                        ok = True
                        break
                    alpha *= 0.5
                if not ok:
                    if stalls >= 1:
                        break
                    stalls += 1
                    J = None  # refresh the chord before giving up
                    continue
                ratio = np.linalg.norm(Ft) / nF
                x, F, surf, fields, G = xt, Ft, st, ft, Gt
                step_count += 1
                lam = lambda_from_fields(fields, grid, G)
                W = _willmore(fields, grid)
                res = _scaled_residual(fields, grid, G, lam, R)
                gal = float(np.linalg.norm(F))
                best = surf
                trace.add(step=step_count, phase="newton", W=W, area=fields.area, **{"lambda": lam}, scaled_residual=res, galerkin_residual=gal, step_size=alpha)
                if ratio > 0.3 or alpha < 1.0:
                    J = None
                    stalls = 0
        trace.status = "converged" if done() else "max_steps"
        return best, trace
    except (DegeneracyError, DomainError) as exc:
        trace.status = "degenerate"
        trace.message = str(exc)
        return best, trace
