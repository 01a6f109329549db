"""Star-shaped spheres ``y = c + rho(omega) omega`` in a metric chart.

Extrinsic geometry is assembled at the grid nodes in the coordinate frame
``e_1 = dy/dtheta``, ``e_2 = dy/dphi``.  Signs: ``nu`` is the outward g-unit
normal and ``A_ij = g(D_{e_i} nu, e_j)``, so a round sphere of radius r in flat
space has ``H = 2/r``.

Covariant derivatives of tangential tensors are taken in ambient components:
a tangential tensor is lifted with the dual coframe ``eps^i = gamma^{ij} g(e_j, .)``,
its ambient components (smooth functions on S^2) are differentiated
pseudospectrally, the ambient Christoffel correction is applied and the result
is restricted back with ``e_i``.  This never differentiates anything that is
singular at the poles.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .ambient import MetricChart, curvature_fields, riemann_from_ricci
from .errors import ConfigError, DegeneracyError
from .sphere import DERIVS, SphericalGrid, lm_arrays, n_coeffs

CONVENTION = "real orthonormal spherical harmonics, no Condon-Shortley phase, flat index l*l+l+m"


@dataclass(eq=False)
class Surface:
    center: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        self.coeffs = np.asarray(self.coeffs, dtype=float).reshape(-1)
        L = int(round(math.sqrt(self.coeffs.size))) - 1
        if n_coeffs(L) != self.coeffs.size:
            raise ConfigError(f"coefficient count {self.coeffs.size} is not a square (L+1)^2")

    @property
    def L(self) -> int:
        return int(round(math.sqrt(self.coeffs.size))) - 1

    @classmethod
    def sphere(cls, center, r: float, L: int) -> "Surface":
        a = np.zeros(n_coeffs(L))
        a[0] = r * math.sqrt(4.0 * math.pi)
        return cls(np.asarray(center, dtype=float), a)

    @classmethod
    def from_radial_function(cls, grid: SphericalGrid, center, func, L: int | None = None) -> "Surface":
        """Project ``rho = func(omega)`` (``omega`` of shape ``(K, 3)``) to degree ``L``."""
        om = grid.unit_sphere()["f"]
        return cls(np.asarray(center, dtype=float), grid.analyze(func(om), L))

    def copy(self) -> "Surface":
        return Surface(self.center.copy(), self.coeffs.copy())

    def translated(self, t) -> "Surface":
        return Surface(self.center + np.asarray(t, dtype=float), self.coeffs.copy())

    def scaled(self, s: float) -> "Surface":
        return Surface(self.center.copy(), self.coeffs * s)

    def resampled(self, L: int) -> "Surface":
        a = np.zeros(n_coeffs(L))
        n = min(a.size, self.coeffs.size)
        a[:n] = self.coeffs[:n]
        return Surface(self.center.copy(), a)

    def filtered(self, L_cut: int) -> "Surface":
        ls, _ = lm_arrays(self.L)
        return Surface(self.center.copy(), np.where(ls <= L_cut, self.coeffs, 0.0))

    def radial(self, grid: SphericalGrid, derivs=DERIVS):
        return grid.synthesize(self.coeffs, derivs)

    def radius_along(self, grid: SphericalGrid, directions):
        return grid.evaluate(self.coeffs, directions)

    def recentered(self, grid: SphericalGrid, center, tol: float = 1e-14, max_iter: int = 60) -> "Surface":
        """The same surface written as a radial graph about ``center``.

        Per grid direction ``omega`` the ray ``center + t omega`` is intersected
        with the surface by a secant iteration on ``|x - c| - rho((x - c)/|x - c|)``.
        ``center`` must lie well inside (the new graph must exist).
        """
        p = np.asarray(center, dtype=float).reshape(3)
        om = grid.unit_sphere()["f"]
        off = p - self.center

        def F(t):
            x = off + t[:, None] * om
            n = np.linalg.norm(x, axis=1)
            return n - self.radius_along(grid, x / n[:, None])

        r0 = self.coeffs[0] / math.sqrt(4.0 * math.pi)
        t0, t1 = np.full(len(om), r0), np.full(len(om), 1.01 * r0)
        f0, f1 = F(t0), F(t1)
        for _ in range(max_iter):
            den = f1 - f0
            step = np.where(den != 0, f1 * (t1 - t0) / np.where(den != 0, den, 1.0), 0.0)
            t0, f0 = t1, f1
            t1 = t1 - step
            if np.max(np.abs(step)) <= tol * r0:
                break
            f1 = F(t1)
        else:
            raise DegeneracyError("recentering: ray intersection did not converge")
        if not np.all(t1 > 0):
            raise DegeneracyError("recentering: new centre is not inside the surface")
        return Surface(p.copy(), grid.analyze(t1, self.L))

    # -- serialization --------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "center": [float(v) for v in self.center],
            "L": self.L,
            "coeffs": [float(v) for v in self.coeffs],
            "convention": CONVENTION,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d) -> "Surface":
        if not isinstance(d, dict):
            raise ConfigError("surface: expected a JSON object")
        for key in ("center", "L", "coeffs"):
            if key not in d:
                raise ConfigError(f"surface.{key}: missing")
        unknown = set(d) - {"center", "L", "coeffs", "convention"}
        if unknown:
            raise ConfigError(f"surface: unknown keys {sorted(unknown)}")
        c = d["center"]
        if not (isinstance(c, list) and len(c) == 3 and all(isinstance(v, (int, float)) for v in c)):
            raise ConfigError("surface.center: expected a list of 3 numbers")
        L = d["L"]
        if not isinstance(L, int) or isinstance(L, bool) or L < 0:
            raise ConfigError("surface.L: expected a non-negative integer")
        a = d["coeffs"]
        if not (isinstance(a, list) and len(a) == n_coeffs(L) and all(isinstance(v, (int, float)) for v in a)):
            raise ConfigError(f"surface.coeffs: expected a list of (L+1)^2 = {n_coeffs(L)} numbers")
        return cls(np.array(c, dtype=float), np.array(a, dtype=float))

    @classmethod
    def from_json(cls, text: str) -> "Surface":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"surface: invalid JSON ({exc})") from exc
        return cls.from_dict(d)

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "Surface":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read surface file {path}: {exc}") from exc
        return cls.from_json(text)


@dataclass(eq=False)
class GeometryFields:
    """Per-node extrinsic and ambient data of a surface (node axis first)."""

    grid: SphericalGrid
    rho: np.ndarray
    dirs: np.ndarray  # unit vectors omega
    y: np.ndarray
    e: np.ndarray  # [K, i, alpha]
    D: np.ndarray  # ambient covariant second derivatives [K, i, j, alpha]
    gamma: np.ndarray
    gamma_inv: np.ndarray
    dmu: np.ndarray  # sqrt(det gamma) / sin(theta): sum(w * f * dmu) integrates f
    nu: np.ndarray
    nu_flat: np.ndarray
    A: np.ndarray
    H: np.ndarray
    Acirc: np.ndarray
    Acirc_norm2: np.ndarray
    ric_nn: np.ndarray
    omega: np.ndarray  # Ric(nu, e_i)
    T: np.ndarray
    Tcirc: np.ndarray
    sc: np.ndarray
    g: np.ndarray
    gam: np.ndarray  # ambient Christoffels at nodes
    ric: np.ndarray
    eps: np.ndarray  # dual coframe [K, i, alpha]
    surf_gam: np.ndarray  # Gamma^k_ij of gamma [K, k, i, j]

    @cached_property
    def rm(self) -> np.ndarray:
        """Ambient curvature tensor at the nodes (rebuilt from Ricci)."""
        return riemann_from_ricci(self.g, self.ric, self.sc)

    @property
    def quad(self) -> np.ndarray:
        return self.grid.weights * self.dmu

    @property
    def area(self) -> float:
        return float(np.sum(self.quad))


def geometry(chart: MetricChart, surface: Surface, grid: SphericalGrid) -> GeometryFields:
    if surface.L > grid.L:
        raise ConfigError(f"surface degree {surface.L} exceeds grid degree {grid.L}")
    R = surface.radial(grid)
    rho = R["f"]
    bad = np.flatnonzero(~(rho > 0))
    if bad.size:
        k = int(bad[0])
        raise DegeneracyError(f"radial function not positive at node {k} (rho = {rho[k]:.3e})")
    U = grid.unit_sphere()
    om = U["f"]
    y = surface.center + rho[:, None] * om
    chart.check_domain(y, "surface node")
    rt, rp = R["t"][:, None], R["p"][:, None]
    r0 = rho[:, None]
    y_t = rt * om + r0 * U["t"]
    y_p = rp * om + r0 * U["p"]
    y_tt = R["tt"][:, None] * om + 2 * rt * U["t"] + r0 * U["tt"]
    y_tp = R["tp"][:, None] * om + rt * U["p"] + rp * U["t"] + r0 * U["tp"]
    y_pp = R["pp"][:, None] * om + 2 * rp * U["p"] + r0 * U["pp"]
    e = np.stack([y_t, y_p], axis=1)
    d2y = np.stack([np.stack([y_tt, y_tp], 1), np.stack([y_tp, y_pp], 1)], 1)

    g, ginv, gam, _, ric, sc = curvature_fields(chart, y, with_rm=False)
    D = d2y + np.einsum("kmab,kia,kjb->kijm", gam, e, e, optimize=True)
    ge = np.einsum("kab,kib->kia", g, e)  # lowered tangents
    gamma = np.einsum("kia,kja->kij", ge, e)
    det = gamma[:, 0, 0] * gamma[:, 1, 1] - gamma[:, 0, 1] * gamma[:, 1, 0]
    bad = np.flatnonzero(~((det > 0) & (gamma[:, 0, 0] > 0)))
    if bad.size:
        k = int(bad[0])
        raise DegeneracyError(f"induced metric not positive definite at node {k}")
    gamma_inv = np.stack(
        [
            np.stack([gamma[:, 1, 1], -gamma[:, 0, 1]], -1),
            np.stack([-gamma[:, 1, 0], gamma[:, 0, 0]], -1),
        ],
        1,
    ) / det[:, None, None]
    n = np.cross(y_t, y_p)  # annihilates e_1, e_2: a normal covector
    nn = np.sqrt(np.einsum("ka,kab,kb->k", n, ginv, n))
    nu_flat = n / nn[:, None]
    nu = np.einsum("kab,kb->ka", ginv, nu_flat)
    A = -np.einsum("ka,kija->kij", nu_flat, D)
    A = 0.5 * (A + np.swapaxes(A, 1, 2))
    H = np.einsum("kij,kij->k", gamma_inv, A)
    Acirc = A - 0.5 * H[:, None, None] * gamma
    Acirc_up = np.einsum("kia,kab,kjb->kij", gamma_inv, Acirc, gamma_inv)
    Acirc_norm2 = np.einsum("kij,kij->k", Acirc, Acirc_up)
    ric_nn = np.einsum("ka,kab,kb->k", nu, ric, nu)
    omega = np.einsum("ka,kab,kib->ki", nu, ric, e)
    T = np.einsum("kia,kab,kjb->kij", e, ric, e)
    Tcirc = T - 0.5 * (sc - ric_nn)[:, None, None] * gamma
    eps = np.einsum("kij,kja->kia", gamma_inv, ge)
    surf_gam = np.einsum("kpl,klij->kpij", gamma_inv, np.einsum("kla,kija->klij", ge, D))
    dmu = np.sqrt(det) / grid.sin_theta
    return GeometryFields(
        grid=grid, rho=rho, dirs=om, y=y, e=e, D=D, gamma=gamma, gamma_inv=gamma_inv, dmu=dmu,
        nu=nu, nu_flat=nu_flat, A=A, H=H, Acirc=Acirc, Acirc_norm2=Acirc_norm2, ric_nn=ric_nn,
        omega=omega, T=T, Tcirc=Tcirc, sc=sc, g=g, gam=gam, ric=ric, eps=eps, surf_gam=surf_gam,
    )


# ---------------------------------------------------------------------------
# calculus on the surface


def integrate(fields: GeometryFields, grid: SphericalGrid, f):
    return np.tensordot(grid.weights * fields.dmu, f, axes=(0, 0))


def surface_gradient(fields: GeometryFields, grid: SphericalGrid, f):
    """Coordinate components ``(d_theta f, d_phi f)`` of the differential."""
    d = grid.derivatives(f, ("t", "p"))
    return np.stack([d["t"], d["p"]], axis=1)


def hessian(fields: GeometryFields, grid: SphericalGrid, f):
    """Covariant Hessian ``d_ij f - Gamma^k_ij d_k f`` of a scalar field."""
    d = grid.derivatives(f, ("t", "p", "tt", "tp", "pp"))
    df = np.stack([d["t"], d["p"]], axis=1)
    d2 = np.stack([np.stack([d["tt"], d["tp"]], 1), np.stack([d["tp"], d["pp"]], 1)], 1)
    return d2 - np.einsum("kpij,kp->kij", fields.surf_gam, df)


def laplace_beltrami(fields: GeometryFields, grid: SphericalGrid, f):
    return np.einsum("kij,kij->k", fields.gamma_inv, hessian(fields, grid, f))


def lift(fields: GeometryFields, T):
    """Ambient covariant components of a tangential covariant tensor."""
    out = np.asarray(T, dtype=float)
    rank = out.ndim - 1
    for _ in range(rank):
        # contract the leading tangential slot and append the ambient slot at the end
        out = np.einsum("ki...,kia->k...a", out, fields.eps)
    return out


def restrict(fields: GeometryFields, Tamb):
    out = np.asarray(Tamb, dtype=float)
    rank = out.ndim - 1
    for _ in range(rank):
        out = np.einsum("ka...,kia->k...i", out, fields.e)
    return out


def covariant_derivative(fields: GeometryFields, grid: SphericalGrid, T):
    """``(nabla_k T)_{i...}`` with the new index first: shape ``(K, 2, 2, ...)``."""
    T = np.asarray(T, dtype=float)
    rank = T.ndim - 1
    if rank == 0:
        return surface_gradient(fields, grid, T)
    Tamb = lift(fields, T)
    d = grid.derivatives(Tamb, ("t", "p"))
    dT = np.stack([d["t"], d["p"]], axis=1)  # [K, k, a, b, ...]
    # connection along e_k: C[K, k, mu, alpha] = Gamma^mu_{kappa alpha} e_k^kappa
    C = np.einsum("kmca,kic->kima", fields.gam, fields.e)
    letters = "abcdef"[:rank]
    for s in range(rank):
        src = letters[:s] + "m" + letters[s + 1 :]
        dT = dT - np.einsum(f"kim{letters[s]},k{src}->ki{letters}", C, Tamb)
    return restrict_after(fields, dT)


def restrict_after(fields, dT):
    """Restrict every ambient slot after the leading derivative slot."""
    out = dT
    rank = out.ndim - 2
    for _ in range(rank):
        out = np.einsum("kja...,kia->kj...i", out, fields.e)
    return out


def covariant_divergence(fields: GeometryFields, grid: SphericalGrid, T):
    """``gamma^{ki} (nabla_k T)_{i...}`` for a tangential tensor of rank >= 1."""
    dT = covariant_derivative(fields, grid, T)
    return np.einsum("kpi,kpi...->k...", fields.gamma_inv, dT)


def rough_laplacian(fields: GeometryFields, grid: SphericalGrid, T):
    T = np.asarray(T, dtype=float)
    if T.ndim == 1:
        return laplace_beltrami(fields, grid, T)
    d2 = covariant_derivative(fields, grid, covariant_derivative(fields, grid, T))
    return np.einsum("kpq,kpq...->k...", fields.gamma_inv, d2)


def tensor_norm2(fields: GeometryFields, T):
    """Pointwise ``|T|^2`` w.r.t. ``gamma`` for tangential tensors of rank 0..2."""
    T = np.asarray(T, dtype=float)
    gi = fields.gamma_inv
    if T.ndim == 1:
        return T * T
    if T.ndim == 2:
        return np.einsum("ki,kij,kj->k", T, gi, T)
    if T.ndim == 3:
        return np.einsum("kij,kia,kjb,kab->k", T, gi, gi, T)
    raise ValueError("rank > 2 not supported")


def l2_norm(fields: GeometryFields, grid: SphericalGrid, T) -> float:
    return float(np.sqrt(max(integrate(fields, grid, tensor_norm2(fields, T)), 0.0)))


def sup_norm(fields: GeometryFields, T) -> float:
    return float(np.sqrt(np.max(tensor_norm2(fields, T))))


def trace_free(fields: GeometryFields, S):
    tr = np.einsum("kij,kij->k", fields.gamma_inv, S)
    return S - 0.5 * tr[:, None, None] * fields.gamma


def simons_terms(fields: GeometryFields, grid: SphericalGrid):
    """Left- and right-hand sides of the Simons identity for ``Acirc``.

    The gradient of the tangential Ricci 1-form enters symmetrised,
    ``nabla_i omega_j + nabla_j omega_i``: its antisymmetric part does not vanish
    on curved non-umbilic surfaces while every other term is symmetric.
    """
    H = fields.H
    Ac = fields.Acirc
    gi = fields.gamma_inv
    gmm = fields.gamma
    lhs = rough_laplacian(fields, grid, Ac)
    hessH = trace_free(fields, hessian(fields, grid, H))
    Ac_mixed = np.einsum("kip,kpj->kij", Ac, gi)  # Acirc_i^j
    AA = np.einsum("kip,kpj->kij", Ac_mixed, Ac)  # Acirc_i^k Acirc_kj
    n2 = fields.Acirc_norm2
    # tangential curvature Rm(e_a, e_b, e_c, e_d)
    rms = np.einsum("kabcd,kia,kjb,klc,kmd->kijlm", fields.rm, fields.e, fields.e, fields.e, fields.e, optimize=True)
    term1 = np.einsum("kjp,klm,klipm->kij", Ac_mixed, gi, rms)
    Ac_up = np.einsum("kpa,kab,kqb->kpq", gi, Ac, gi)
    term2 = np.einsum("kpq,kipjq->kij", Ac_up, rms)
    dom = covariant_derivative(fields, grid, fields.omega)  # [K, i, j] = nabla_i omega_j
    divom = np.einsum("kij,kij->k", gi, dom)
    rhs = (
        hessH
        + H[:, None, None] * AA
        + 0.5 * (H**2)[:, None, None] * Ac
        - n2[:, None, None] * Ac
        - 0.5 * (H * n2)[:, None, None] * gmm
        + term1
        + term2
        + dom
        + np.swapaxes(dom, 1, 2)
        - divom[:, None, None] * gmm
    )
    return lhs, rhs


def simons_residual(chart: MetricChart, surface: Surface, grid: SphericalGrid) -> float:
    """``L^2(d mu)`` norm of the Simons identity defect."""
    fields = geometry(chart, surface, grid)
    lhs, rhs = simons_terms(fields, grid)
    return l2_norm(fields, grid, lhs - rhs)
