"""Analytic Riemannian 3-metrics on coordinate balls.

Curvature convention: ``Rm[a, b, c, d] = <(D_a D_b - D_b D_a) d_c, d_d>``,
``Ric[b, c] = g^{ad} Rm[a, b, c, d]`` and ``Sc = g^{bc} Ric[b, c]``.  With
this convention the unit round sphere has ``Sc = 6`` and
``Rm[a, b, c, d] = g_bc g_ad - g_ac g_bd``.

Array index conventions (all evaluators are vectorised over leading axes):

* ``dg[..., c, a, b] = d_c g_ab``
* ``d2g[..., c, d, a, b] = d_c d_d g_ab``
* ``gam[..., k, i, j] = Gamma^k_ij``
* ``dgam[..., m, k, i, j] = d_m Gamma^k_ij``
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, SolverError
from .polynomial import Polynomial3

_EYE = np.eye(3)


# ---------------------------------------------------------------------------
# tensor assembly


def _lower(dg):
    """``1/2 (d_i g_jl + d_j g_il - d_l g_ij)`` indexed ``[..., i, j, l]``."""
    return 0.5 * (dg + np.swapaxes(dg, -3, -2) - np.moveaxis(dg, -3, -1))


def _raise_last(ginv, T):
    """Contract the last index of ``T[..., i, j, l]`` with ``ginv[k, l]``; result ``[..., k, i, j]``."""
    lead = T.shape[:-3]
    out = np.matmul(T.reshape(lead + (9, 3)), np.swapaxes(ginv, -1, -2))  # [..., ij, k]
    return np.swapaxes(out, -1, -2).reshape(lead + (3, 3, 3))


def christoffel(g, dg):
    """Return ``(ginv, gam)`` from the metric and its first derivatives."""
    ginv = np.linalg.inv(g)
    return ginv, _raise_last(ginv, _lower(dg))


def christoffel_derivative(ginv, dg, d2g):
    """``d_m Gamma^k_ij`` from metric derivatives up to order two."""
    lowered = _lower(dg)  # [i, j, l]
    dlowered = 0.5 * (d2g + np.swapaxes(d2g, -3, -2) - np.moveaxis(d2g, -3, -1))  # [m, i, j, l]
    gi = ginv[..., None, :, :]
    dginv = -np.matmul(np.matmul(gi, dg), gi)  # [m, k, l]
    lead = dg.shape[:-3]
    # sum_l dginv[m, k, l] lowered[i, j, l]
    t1 = np.matmul(dginv, np.swapaxes(lowered.reshape(lead + (9, 3)), -1, -2)[..., None, :, :])
    t1 = t1.reshape(lead + (3, 3, 3, 3))
    t2 = _raise_last(ginv[..., None, :, :], dlowered)
    return t1 + t2


def riemann(g, gam, dgam):
    """Fully covariant curvature tensor in the package convention."""
    # R^r_{s m n} = d_m Gam^r_{ns} - d_n Gam^r_{ms} + Gam^r_{ml} Gam^l_{ns} - Gam^r_{nl} Gam^l_{ms}
    r_up = (
        np.einsum("...mrns->...rsmn", dgam)
        - np.einsum("...nrms->...rsmn", dgam)
        + np.einsum("...rml,...lns->...rsmn", gam, gam)
        - np.einsum("...rnl,...lms->...rsmn", gam, gam)
    )
    # Rm_{abcd} = g_{dr} R^r_{c a b}
    return np.einsum("...dr,...rcab->...abcd", g, r_up)


def ricci_from_christoffel(gam, dgam):
    """``Ric_sn = R^r_{s r n}`` without building the full curvature tensor."""
    return (
        np.einsum("...rrns->...sn", dgam)
        - np.einsum("...nrrs->...sn", dgam)
        + np.einsum("...rrl,...lns->...sn", gam, gam)
        - np.einsum("...rnl,...lrs->...sn", gam, gam)
    )


# ---------------------------------------------------------------------------
# charts


class MetricChart:
    """A Riemannian metric on the coordinate ball ``|y| < valid_radius``."""

    kind = "abstract"
    homogeneous = False
    valid_radius: float

    def metric_derivatives(self, y, order: int = 2):
        """Return ``[g, dg, d2g][: order + 1]`` at ``y``."""
        raise NotImplementedError

    def metric(self, y):
        return self.metric_derivatives(y, 0)[0]

    def christoffel(self, y, derivative: bool = False):
        """Return ``gam`` or ``(gam, dgam)`` at ``y``."""
        if derivative:
            g, dg, d2g = self.metric_derivatives(y, 2)
            ginv, gam = christoffel(g, dg)
            return gam, christoffel_derivative(ginv, dg, d2g)
        g, dg = self.metric_derivatives(y, 1)
        return christoffel(g, dg)[1]

    def scalar_curvature_derivatives(self, y):
        """``(Sc, dSc, d2Sc)`` as coordinate partials, or ``None`` if not closed form."""
        return None

    def geodesic_rhs(self, x, xd, J=None, K=None):
        """Geodesic acceleration ``-Gamma(xd, xd)`` and, given ``(J, K)``, its variation."""
        if J is None:
            gx = np.einsum("...kij,...i->...kj", self.christoffel(x), xd)
            return np.einsum("...kj,...j->...k", -gx, xd)
        gam, dgam = self.christoffel(x, derivative=True)
        gx = np.einsum("...kij,...i->...kj", gam, xd)
        acc = -np.einsum("...kj,...j->...k", gx, xd)
        dgx = np.matmul(dgam, xd[..., None, None, :, None])[..., 0]  # [m, k, i]
        dgxx = np.matmul(dgx, xd[..., None, :, None])[..., 0]  # [m, k]
        dK = -np.matmul(np.swapaxes(dgxx, -1, -2), J) - 2.0 * np.matmul(gx, K)
        return acc, dK

    def check_domain(self, y, what="point"):
        r = np.linalg.norm(np.asarray(y, dtype=float), axis=-1)
        if np.any(~np.isfinite(r)) or np.any(r >= self.valid_radius):
            raise DomainError(
                f"{what} outside chart ball: |y| = {np.max(r):.6g} >= {self.valid_radius:.6g}"
            )

    def to_config(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class FlatChart(MetricChart):
    valid_radius: float = 1.0
    kind = "flat"
    homogeneous = True

    def metric_derivatives(self, y, order=2):
        lead = np.shape(y)[:-1]
        out = [np.broadcast_to(_EYE, lead + (3, 3)).copy()]
        if order >= 1:
            out.append(np.zeros(lead + (3, 3, 3)))
        if order >= 2:
            out.append(np.zeros(lead + (3, 3, 3, 3)))
        return out

    def christoffel(self, y, derivative=False):
        lead = np.shape(y)[:-1]
        gam = np.zeros(lead + (3, 3, 3))
        if derivative:
            return gam, np.zeros(lead + (3, 3, 3, 3))
        return gam

    def scalar_curvature_derivatives(self, y):
        lead = np.shape(y)[:-1]
        return np.zeros(lead), np.zeros(lead + (3,)), np.zeros(lead + (3, 3))

    def to_config(self):
        return {"kind": "flat", "valid_radius": self.valid_radius}


def _sn_series(kappa: float, n_terms: int = 40):
    """Coefficients of ``sn_k(r)^2 / r^2`` as a power series in ``u = r^2``."""
    coeffs = np.empty(n_terms)
    for n in range(n_terms):
        coeffs[n] = (-1) ** n * 2.0 ** (2 * n + 1) / math.factorial(2 * n + 2) * kappa**n
    return coeffs


def _eval_series(coeffs, u, order=2):
    """Evaluate a power series in ``u`` and its first ``order`` derivatives (Horner)."""
    out = []
    c = np.asarray(coeffs, dtype=float)
    for _ in range(order + 1):
        val = np.zeros_like(u)
        for a in c[::-1]:
            val = val * u + a
        out.append(val)
        c = c[1:] * np.arange(1, len(c))
    return out


@dataclass(frozen=True, eq=False)
class SpaceFormChart(MetricChart):
    """Constant sectional curvature ``kappa`` in geodesic normal coordinates.

    ``g_ij = y_i y_j / r^2 + (sn_k(r)^2 / r^2) (delta_ij - y_i y_j / r^2)``.  Both
    ``sn_k(r)^2 / r^2`` and ``(1 - sn_k(r)^2 / r^2) / r^2`` are entire functions of
    ``u = r^2``; they are evaluated from their power series, which also removes
    the 0/0 at the origin.
    """

    kappa: float = 1.0
    valid_radius: float = 1.0
    kind = "space_form"
    homogeneous = True

    def __post_init__(self):
        if self.kappa > 0 and self.valid_radius >= math.pi / math.sqrt(self.kappa):
            raise ConfigError("space_form valid_radius must stay below the conjugate radius")

    @property
    def _series(self):
        s = _sn_series(self.kappa)
        t = -s[1:]
        return s, t

    def radial_functions(self, u, order=2):
        s, t = self._series
        return _eval_series(s, u, order), _eval_series(t, u, order)

    def metric_derivatives(self, y, order=2):
        y = np.asarray(y, dtype=float)
        u = np.sum(y * y, axis=-1)
        (s, s1, s2), (t, t1, t2) = self.radial_functions(u, 2)
        yy = np.einsum("...a,...b->...ab", y, y)
        E = np.broadcast_to(_EYE, y.shape[:-1] + (3, 3))
        ex = lambda a, k: a.reshape(a.shape + (1,) * k)  # noqa: E731
        g = ex(s, 2) * E + ex(t, 2) * yy
        out = [g]
        if order >= 1:
            base1 = ex(s1, 2) * E + ex(t1, 2) * yy  # [a, b]
            dyy = np.einsum("...ca,...b->...cab", E, y) + np.einsum("...cb,...a->...cab", E, y)
            dg = 2.0 * np.einsum("...c,...ab->...cab", y, base1) + ex(t, 3) * dyy
            out.append(dg)
        if order >= 2:
            base2 = ex(s2, 2) * E + ex(t2, 2) * yy
            d2g = (
                2.0 * np.einsum("...cd,...ab->...cdab", E, base1)
                + 4.0 * np.einsum("...c,...d,...ab->...cdab", y, y, base2)
                + 2.0 * ex(t1, 4) * np.einsum("...c,...dab->...cdab", y, dyy)
                + 2.0 * ex(t1, 4) * np.einsum("...d,...cab->...cdab", y, dyy)
                + ex(t, 4)
                * (
                    np.einsum("...ca,...db->...cdab", E, E)
                    + np.einsum("...cb,...da->...cdab", E, E)
                )
            )
            out.append(d2g)
        return out

    def scalar_curvature_derivatives(self, y):
        lead = np.shape(y)[:-1]
        return (
            np.full(lead, 6.0 * self.kappa),
            np.zeros(lead + (3,)),
            np.zeros(lead + (3, 3)),
        )

    def to_config(self):
        return {"kind": "space_form", "kappa": self.kappa, "valid_radius": self.valid_radius}


@dataclass(frozen=True, eq=False)
class ConformalChart(MetricChart):
    """``g = exp(2 phi) delta`` with ``phi`` a polynomial of degree at most 4."""

    phi: Polynomial3 = field(default_factory=Polynomial3)
    valid_radius: float = 1.0
    kind = "conformal"

    def __post_init__(self):
        if self.phi.degree > 4:
            raise ConfigError("conformal factor must have degree <= 4")

    @property
    def homogeneous(self):
        return self.phi.is_zero()

    def metric_derivatives(self, y, order=2):
        y = np.asarray(y, dtype=float)
        ph = self.phi.derivatives(y, order)
        e2 = np.exp(2.0 * ph[0])
        E = np.broadcast_to(_EYE, y.shape[:-1] + (3, 3))
        out = [e2[..., None, None] * E]
        if order >= 1:
            out.append(2.0 * np.einsum("...c,...,...ab->...cab", ph[1], e2, E))
        if order >= 2:
            fac = 2.0 * ph[2] + 4.0 * np.einsum("...c,...d->...cd", ph[1], ph[1])
            out.append(np.einsum("...cd,...,...ab->...cdab", fac, e2, E))
        return out

    def christoffel(self, y, derivative=False):
        ph = self.phi.derivatives(y, 2 if derivative else 1)
        d1 = ph[1]
        lead = d1.shape[:-1]
        # Gamma^k_ij = delta_ki phi_j + delta_kj phi_i - delta_ij phi_k
        gam = np.zeros(lead + (3, 3, 3))
        for k in range(3):
            gam[..., k, k, :] += d1
            gam[..., k, :, k] += d1
        for i in range(3):
            gam[..., :, i, i] -= d1
        if not derivative:
            return gam
        d2 = ph[2]
        dgam = np.zeros(lead + (3, 3, 3, 3))
        for k in range(3):
            dgam[..., :, k, k, :] += d2  # d_m of delta_ki phi_j -> phi_jm
            dgam[..., :, k, :, k] += d2
        for i in range(3):
            dgam[..., :, :, i, i] -= d2
        return gam, dgam

    def geodesic_rhs(self, x, xd, J=None, K=None):
        # Gamma(v, v)^k = 2 (dphi . v) v^k - |v|^2 dphi_k
        ph = self.phi.derivatives(x, 2 if J is not None else 1)
        d1 = ph[1]
        s = np.sum(d1 * xd, axis=-1)[..., None]
        q = np.sum(xd * xd, axis=-1)[..., None]
        acc = q * d1 - 2.0 * s * xd
        if J is None:
            return acc
        d2 = ph[2]
        a = np.einsum("...mj,...j->...m", d2, xd)  # d_m (dphi . v)
        aJ = np.einsum("...m,...mc->...c", a, J)
        d1K = np.einsum("...j,...jc->...c", d1, K)
        vK = np.einsum("...j,...jc->...c", xd, K)
        dK = (
            q[..., None] * np.matmul(d2, J)
            - 2.0 * xd[..., :, None] * aJ[..., None, :]
            - 2.0 * xd[..., :, None] * d1K[..., None, :]
            - 2.0 * s[..., None] * K
            + 2.0 * d1[..., :, None] * vK[..., None, :]
        )
        return acc, dK

    def scalar_curvature(self, y):
        ph = self.phi.derivatives(y, 2)
        lap = np.trace(ph[2], axis1=-2, axis2=-1)
        return np.exp(-2.0 * ph[0]) * (-4.0 * lap - 2.0 * np.sum(ph[1] ** 2, axis=-1))

    def scalar_curvature_derivatives(self, y):
        # Sc = exp(-2 phi) Q with Q = -4 lap(phi) - 2 |d phi|^2, differentiated by hand.
        f0, f1, f2, f3, f4 = self.phi.derivatives(y, 4)
        lap = np.trace(f2, axis1=-2, axis2=-1)
        lap1 = np.einsum("...kka->...a", f3)
        lap2 = np.einsum("...kkab->...ab", f4)
        q = -4.0 * lap - 2.0 * np.sum(f1**2, axis=-1)
        q1 = -4.0 * lap1 - 4.0 * np.einsum("...k,...ka->...a", f1, f2)
        q2 = (
            -4.0 * lap2
            - 4.0 * np.einsum("...kb,...ka->...ab", f2, f2)
            - 4.0 * np.einsum("...k,...kab->...ab", f1, f3)
        )
        w = np.exp(-2.0 * f0)
        sc = w * q
        dsc = w[..., None] * (q1 - 2.0 * f1 * q[..., None])
        outer = lambda a, b: np.einsum("...a,...b->...ab", a, b)  # noqa: E731
        d2sc = w[..., None, None] * (
            q2
            - 2.0 * outer(q1, f1)
            - 2.0 * outer(f1, q1)
            - 2.0 * f2 * q[..., None, None]
            + 4.0 * outer(f1, f1) * q[..., None, None]
        )
        return sc, dsc, d2sc

    def to_config(self):
        return {
            "kind": "conformal",
            "phi": self.phi.to_config(),
            "valid_radius": self.valid_radius,
        }


# ---------------------------------------------------------------------------
# curvature at a point


@dataclass
class CurvatureAtPoint:
    point: np.ndarray
    rm: np.ndarray
    ric: np.ndarray
    sc: float
    dsc: np.ndarray  # coordinate partials of Sc
    grad_sc: np.ndarray  # g^{-1} dSc
    hess_sc: np.ndarray  # covariant Hessian
    einstein: np.ndarray
    fd_step: float | None = None  # None when dSc / Hess Sc are closed form

    @property
    def grad_sc_norm(self) -> float:
        return float(np.sqrt(max(self.dsc @ self.grad_sc, 0.0)))


_D1 = (np.array([1.0, -8.0, 8.0, -1.0]) / 12.0, np.array([-2, -1, 1, 2]))
_D2 = (np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0, np.array([-2, -1, 0, 1, 2]))


def _stencil(pairs):
    """Offsets (S, 3) and weights (S,) of a product stencil given per-axis rules."""
    offs = np.zeros((1, 3))
    wts = np.ones(1)
    for axis, (w, o) in pairs:
        shift = np.zeros((len(o), 3))
        shift[:, axis] = o
        offs = (offs[:, None, :] + shift[None, :, :]).reshape(-1, 3)
        wts = (wts[:, None] * w[None, :]).reshape(-1)
    return offs, wts


def _fd_plan():
    rules = []  # (target index, offsets, weights, power of h)
    for a in range(3):
        rules.append(((a,), *_stencil([(a, _D1)]), 1))
    for a in range(3):
        rules.append(((a, a), *_stencil([(a, _D2)]), 2))
    for a in range(3):
        for b in range(a + 1, 3):
            rules.append(((a, b), *_stencil([(a, _D1), (b, _D1)]), 2))
    offsets = np.concatenate([r[1] for r in rules])
    uniq, inverse = np.unique(offsets, axis=0, return_inverse=True)
    return rules, uniq, inverse.reshape(-1)


_FD_RULES, _FD_OFFSETS, _FD_INVERSE = _fd_plan()


def fd_derivatives(f, y, h, order=2):
    """Fourth-order centred differences of ``f`` at ``y``, one batched call.

    ``f`` maps ``(..., 3)`` points to arrays with the same leading axes.  Returns
    ``(d1, d2)`` with the derivative axes first: ``d1[a]``, ``d2[a, b]``.
    """
    y = np.asarray(y, dtype=float)
    n_rules = 3 if order == 1 else len(_FD_RULES)
    lengths = [len(r[2]) for r in _FD_RULES]
    used = np.unique(_FD_INVERSE[: sum(lengths[:n_rules])])
    pts = y[None, ...] + h * _FD_OFFSETS[used].reshape((len(used),) + (1,) * (y.ndim - 1) + (3,))
    vals = f(pts)
    lookup = {int(u): i for i, u in enumerate(used)}
    d1 = np.empty((3,) + vals.shape[1:])
    d2 = np.empty((3, 3) + vals.shape[1:]) if order >= 2 else None
    pos = 0
    for (target, _, wts, power), n in zip(_FD_RULES[:n_rules], lengths):
        idx = [lookup[int(u)] for u in _FD_INVERSE[pos : pos + n]]
        pos += n
        acc = np.tensordot(wts, vals[idx], axes=(0, 0)) / h**power
        if len(target) == 1:
            d1[target[0]] = acc
        else:
            d2[target] = acc
            d2[target[::-1]] = acc
    return d1, d2


def fd_gradient(f, y, h):
    return fd_derivatives(f, y, h, order=1)[0]


def fd_hessian(f, y, h):
    return fd_derivatives(f, y, h, order=2)[1]


def riemann_from_ricci(g, ric, sc):
    """Three-dimensional curvature tensor from Ricci (the Weyl tensor vanishes).

    ``Rm = P (Kulkarni-Nomizu) g`` with the Schouten tensor ``P = Ric - Sc g / 4``.
    """
    P = ric - 0.25 * sc[..., None, None] * g
    # [a, b, c, d]: P_bc g_ad + P_ad g_bc - P_ac g_bd - P_bd g_ac
    Pbc = P[..., None, :, :, None]
    gad = g[..., :, None, None, :]
    Pad = P[..., :, None, None, :]
    gbc = g[..., None, :, :, None]
    Pac = P[..., :, None, :, None]
    gbd = g[..., None, :, None, :]
    Pbd = P[..., None, :, None, :]
    gac = g[..., :, None, :, None]
    return Pbc * gad + Pad * gbc - Pac * gbd - Pbd * gac


def curvature_fields(chart: MetricChart, y, full: bool = False, with_rm: bool = True):
    """Vectorised ``(g, ginv, gam, rm, ric, sc)`` at points ``y``.

    By default ``rm`` is rebuilt from Ricci (exact in dimension three); with
    ``full=True`` it is assembled from the Christoffel symbols directly.
    """
    g = chart.metric(y)
    ginv = np.linalg.inv(g)
    gam, dgam = chart.christoffel(y, derivative=True)
    if full:
        rm = riemann(g, gam, dgam)
        ric = np.einsum("...ad,...abcd->...bc", ginv, rm)
    else:
        ric = ricci_from_christoffel(gam, dgam)
        ric = 0.5 * (ric + np.swapaxes(ric, -1, -2))
    sc = np.einsum("...bc,...bc->...", ginv, ric)
    if not full:
        rm = riemann_from_ricci(g, ric, sc) if with_rm else None
    return g, ginv, gam, rm, ric, sc


def scalar_curvature(chart: MetricChart, y):
    closed = chart.scalar_curvature_derivatives(y)
    if closed is not None:
        return closed[0]
    return curvature_fields(chart, y)[-1]


def curvature_at(chart: MetricChart, y, fd_step: float = 1e-3) -> CurvatureAtPoint:
    """Assemble all curvature quantities at one chart point.

    ``dSc`` and ``Hess Sc`` are closed form for the builtin charts; for derived
    charts they come from fourth-order finite differences with step ``fd_step``.
    """
    y = np.asarray(y, dtype=float).reshape(3)
    chart.check_domain(y)
    g, ginv, gam, rm, ric, sc = curvature_fields(chart, y, full=True)
    closed = chart.scalar_curvature_derivatives(y)
    step = None
    if closed is not None:
        sc, dsc, d2sc = closed
    else:
        step = fd_step
        scf = lambda z: scalar_curvature(chart, z)  # noqa: E731
        dsc, d2sc = fd_derivatives(scf, y, step)
    hess = d2sc - np.einsum("kij,k->ij", gam, dsc)
    return CurvatureAtPoint(
        point=y,
        rm=rm,
        ric=ric,
        sc=float(sc),
        dsc=np.asarray(dsc, dtype=float),
        grad_sc=ginv @ dsc,
        hess_sc=0.5 * (hess + hess.T),
        einstein=ric - 0.5 * sc * g,
        fd_step=step,
    )


# ---------------------------------------------------------------------------
# geodesics


@dataclass(frozen=True)
class GeodesicSolverParams:
    step_size: float | None = None  # default: valid_radius / 2000
    shoot_tol: float = 1e-12
    max_newton_iters: int = 30

    def __post_init__(self):
        if self.step_size is not None and not self.step_size > 0:
            raise ConfigError("step_size must be positive")
        if not self.shoot_tol > 0:
            raise ConfigError("shoot_tol must be positive")

    def step_for(self, chart: MetricChart) -> float:
        return self.step_size if self.step_size is not None else chart.valid_radius / 2000.0


def _n_steps(chart, v, params, n_steps):
    if n_steps is not None:
        return int(n_steps)
    vmax = float(np.max(np.linalg.norm(v, axis=-1), initial=0.0))
    return max(1, int(math.ceil(vmax / params.step_for(chart))))


def integrate_geodesics(chart: MetricChart, p, v, params=GeodesicSolverParams(), *, jacobian=False, n_steps=None):
    """Classical RK4 for ``x'' = -Gamma(x', x')`` on ``t in [0, 1]``.

    With ``jacobian=True`` the variational equation is integrated alongside and
    ``d x(1) / d v`` is returned as well.
    """
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    p, v = np.broadcast_arrays(p, v)
    x = p.copy()
    xd = v.copy()
    n = _n_steps(chart, v, params, n_steps)
    h = 1.0 / n
    chart.check_domain(x, "geodesic start")

    if isinstance(chart, FlatChart):
        out = p + v
        chart.check_domain(out, "geodesic")
        if jacobian:
            return out, np.broadcast_to(_EYE, v.shape + (3,)).copy()
        return out

    if not jacobian:
        for _ in range(n):
            k1x, k1v = xd, chart.geodesic_rhs(x, xd)
            k2x = xd + 0.5 * h * k1v
            k2v = chart.geodesic_rhs(x + 0.5 * h * k1x, k2x)
            k3x = xd + 0.5 * h * k2v
            k3v = chart.geodesic_rhs(x + 0.5 * h * k2x, k3x)
            k4x = xd + h * k3v
            k4v = chart.geodesic_rhs(x + h * k3x, k4x)
            x = x + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
            xd = xd + h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
            chart.check_domain(x, "geodesic")
        return x

    J = np.zeros(v.shape + (3,))
    K = np.broadcast_to(_EYE, v.shape + (3,)).copy()

    def rhs_j(x, xd, J, K):
        acc, dK = chart.geodesic_rhs(x, xd, J, K)
        return xd, acc, K, dK

    for _ in range(n):
        a = rhs_j(x, xd, J, K)
        b = rhs_j(x + 0.5 * h * a[0], xd + 0.5 * h * a[1], J + 0.5 * h * a[2], K + 0.5 * h * a[3])
        c = rhs_j(x + 0.5 * h * b[0], xd + 0.5 * h * b[1], J + 0.5 * h * b[2], K + 0.5 * h * b[3])
        d = rhs_j(x + h * c[0], xd + h * c[1], J + h * c[2], K + h * c[3])
        x = x + h / 6.0 * (a[0] + 2 * b[0] + 2 * c[0] + d[0])
        xd = xd + h / 6.0 * (a[1] + 2 * b[1] + 2 * c[1] + d[1])
        J = J + h / 6.0 * (a[2] + 2 * b[2] + 2 * c[2] + d[2])
        K = K + h / 6.0 * (a[3] + 2 * b[3] + 2 * c[3] + d[3])
        chart.check_domain(x, "geodesic")
    return x, J


def exp_map(chart: MetricChart, p, v, params=GeodesicSolverParams()):
    """``exp_p(v)``; broadcasts over leading axes of ``p`` and ``v``."""
    return integrate_geodesics(chart, p, v, params)


def log_map(chart: MetricChart, p, q, params=GeodesicSolverParams(), *, v0=None, return_jacobian=False):
    """Initial velocity of the geodesic from ``p`` to ``q`` (Newton shooting).

    Starts from ``q - p`` (or ``v0``).  Returns ``v`` or ``(v, d exp_p / dv at v)``.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    p, q = np.broadcast_arrays(p, q)
    v = (q - p) if v0 is None else np.array(np.broadcast_to(v0, q.shape), dtype=float)
    n_steps = _n_steps(chart, q - p, params, None) + 1
    resid = np.inf
    for _ in range(params.max_newton_iters):
        x, J = integrate_geodesics(chart, p, v, params, jacobian=True, n_steps=n_steps)
        r = x - q
        resid = float(np.max(np.abs(r), initial=0.0))
        if resid <= 0.01 * params.shoot_tol:
            break
        v = v - np.linalg.solve(J, r[..., None])[..., 0]
    else:
        if resid > params.shoot_tol:
            raise SolverError("log_map Newton shooting did not converge", resid)
    if return_jacobian:
        return v, J
    return v


def norm_at(chart: MetricChart, p, v):
    g = chart.metric(p)
    return np.sqrt(np.einsum("...a,...ab,...b->...", v, g, v))


def distance(chart: MetricChart, p, q, params=GeodesicSolverParams()):
    p = np.asarray(p, dtype=float)
    v = log_map(chart, p, q, params)
    return norm_at(chart, np.broadcast_to(p, v.shape), v)


# ---------------------------------------------------------------------------
# normal coordinates


def orthonormal_frame(g):
    """Gram-Schmidt of the coordinate basis (order 1, 2, 3) w.r.t. ``g``.

    Returns ``F`` whose columns are the frame vectors in chart components.
    """
    F = np.zeros((3, 3))
    for a in range(3):
        w = _EYE[:, a].copy()
        for b in range(a):
            w = w - (F[:, b] @ g @ w) * F[:, b]
        F[:, a] = w / np.sqrt(w @ g @ w)
    return F


class NormalChart(MetricChart):
    """Geodesic normal coordinates ``x`` about ``p0`` of a base chart.

    ``x`` maps to ``exp_{p0}(F x)``; the metric is ``(J F)^T g (J F)`` with ``J`` the
    differential of ``exp`` from the variational equation.  First and second
    metric derivatives are fourth-order centred differences with step ``fd_step``
    (truncation O(fd_step^4), round-off O(eps / fd_step^2) for the second ones).
    """

    kind = "normal"

    def __init__(
        self, base: MetricChart, p0, params=GeodesicSolverParams(), fd_step: float = 1e-3, n_steps: int = 96
    ):
        self.base = base
        self.p0 = np.asarray(p0, dtype=float).reshape(3)
        self.params = params
        self.fd_step = fd_step
        self.frame = orthonormal_frame(base.metric(self.p0))
        gmin = float(np.min(np.linalg.eigvalsh(base.metric(self.p0))))
        self.valid_radius = 0.5 * (base.valid_radius - np.linalg.norm(self.p0)) * math.sqrt(gmin)
        # a fixed step count keeps the evaluator a smooth function of x
        self._n_steps = int(n_steps)

    @property
    def homogeneous(self):
        return self.base.homogeneous

    def to_base(self, x, jacobian=False):
        x = np.asarray(x, dtype=float)
        v = x @ self.frame.T
        return integrate_geodesics(
            self.base, self.p0, v, self.params, jacobian=jacobian, n_steps=self._n_steps
        )

    def _metric(self, x):
        X, J = self.to_base(x, jacobian=True)
        M = J @ self.frame
        return np.einsum("...ai,...ab,...bj->...ij", M, self.base.metric(X), M)

    def metric_derivatives(self, y, order=2):
        y = np.asarray(y, dtype=float)
        out = [self._metric(y)]
        if order >= 1:
            d1, d2 = fd_derivatives(self._metric, y, self.fd_step, order=min(order, 2))
            out.append(np.moveaxis(d1, 0, -3))
            if order >= 2:
                out.append(np.moveaxis(d2, (0, 1), (-4, -3)))
        return out

    def scalar_curvature_derivatives(self, y):
        # At the centre the frame pulls back dSc and Hess Sc exactly (Gamma = 0 there).
        y = np.asarray(y, dtype=float)
        if y.shape != (3,) or np.any(y != 0.0):
            return None
        closed = self.base.scalar_curvature_derivatives(self.p0)
        if closed is None:
            return None
        sc, dsc, d2sc = closed
        hess = d2sc - np.einsum("kij,k->ij", self.base.christoffel(self.p0), dsc)
        F = self.frame
        return float(sc), F.T @ dsc, F.T @ hess @ F

    def to_config(self):
        return {"kind": "normal", "base": self.base.to_config(), "p0": self.p0.tolist()}


def recenter_chart(chart: MetricChart, p0, params=GeodesicSolverParams()) -> NormalChart:
    p0 = np.asarray(p0, dtype=float)
    if np.linalg.norm(p0) >= 0.5 * chart.valid_radius:
        raise DomainError("recentering point must satisfy |p0| < valid_radius / 2")
    return NormalChart(chart, p0, params)


def _fibonacci_directions(n):
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    phi = math.pi * (1.0 + 5**0.5) * k
    s = np.sqrt(1.0 - z * z)
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1)


def loglog_slope(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = (x > 0) & (y > 0) & np.isfinite(y)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def christoffel_expansion_check(chart: MetricChart, n_levels: int = 6, r0: float | None = None, n_dirs: int = 26) -> dict:
    """Compare Christoffel symbols and ``div b`` with their first-order models.

    The chart must be in normal form at the origin.  Reports the residual
    maxima per probe radius and their log-log slopes.
    """
    curv = curvature_at(chart, np.zeros(3))
    g0, dg0 = chart.metric_derivatives(np.zeros(3), 1)
    rm = curv.rm
    # Rm^n_{a c b} = Rm_{a c b n} at the origin (g = delta)
    coef = -(np.einsum("acbn->nabc", rm) + np.einsum("bcan->nabc", rm)) / 3.0
    ric = curv.ric
    r0 = 0.25 * chart.valid_radius if r0 is None else r0
    radii = r0 * 0.5 ** np.arange(n_levels)
    dirs = _fibonacci_directions(n_dirs)
    gam_res, div_res = [], []
    for r in radii:
        y = r * dirs
        gam = chart.christoffel(y)
        model = np.einsum("nabc,kc->knab", coef, y)
        gam_res.append(float(np.max(np.abs(gam - model))))
        div = np.einsum("...aab->...b", gam)
        div_model = -np.einsum("bc,kc->kb", ric, y) / 3.0
        div_res.append(float(np.max(np.abs(div - div_model))))
    return {
        "radii": radii.tolist(),
        "gamma_residual": gam_res,
        "div_residual": div_res,
        "gamma_slope": loglog_slope(radii, gam_res),
        "div_slope": loglog_slope(radii, div_res),
        "normal_form_error": float(max(np.max(np.abs(g0 - _EYE)), np.max(np.abs(dg0)))),
    }


def divergence_einstein(chart: MetricChart, y, h: float) -> np.ndarray:
    """Second-order finite-difference ``nabla^a G_ab`` at ``y`` with step ``h``."""
    y = np.asarray(y, dtype=float)
    curv = curvature_at(chart, y)
    g, dg = chart.metric_derivatives(y, 1)
    ginv, gam = christoffel(g, dg)

    def G(z):
        _, _, _, _, ric, sc = curvature_fields(chart, z)
        return ric - 0.5 * sc * chart.metric(z)

    dG = np.empty((3, 3, 3))
    for c in range(3):
        e = np.zeros(3)
        e[c] = h
        dG[c] = (G(y + e) - G(y - e)) / (2 * h)
    Gy = curv.einstein
    cov = dG - np.einsum("kca,kb->cab", gam, Gy) - np.einsum("kcb,ak->cab", gam, Gy)
    return np.einsum("ca,cab->b", ginv, cov)


# ---------------------------------------------------------------------------
# configuration


def chart_from_config(cfg: dict) -> MetricChart:
    """Build a chart from ``{kind, kappa, phi, valid_radius}``."""
    if not isinstance(cfg, dict):
        raise ConfigError("metric block must be a mapping")
    allowed = {"kind", "kappa", "phi", "valid_radius"}
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigError(f"metric: unknown keys {sorted(unknown)}")
    kind = cfg.get("kind", "flat")
    radius = float(cfg.get("valid_radius", 1.0))
    if radius <= 0:
        raise ConfigError("metric.valid_radius must be positive")
    if kind == "flat":
        return FlatChart(radius)
    if kind == "space_form":
        return SpaceFormChart(float(cfg.get("kappa", 1.0)), radius)
    if kind == "conformal":
        try:
            phi = Polynomial3.from_config(cfg.get("phi", {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"metric.phi: {exc}") from exc
        return ConformalChart(phi, radius)
    raise ConfigError(f"metric.kind: unknown kind {kind!r}")


def morse_metric(valid_radius: float = 1.0) -> ConformalChart:
    """Default test metric: ``phi = 0.15 (y1^2 + 2 y2^2 + 3 y3^2) - 0.1 y1``."""
    phi = Polynomial3({(2, 0, 0): 0.15, (0, 2, 0): 0.30, (0, 0, 2): 0.45, (1, 0, 0): -0.1})
    return ConformalChart(phi, valid_radius)


def critical_point_of_scalar_curvature(chart: MetricChart, start=None, tol: float = 1e-13, max_iter: int = 50):
    """Newton iteration on the coordinate gradient of ``Sc``.

    Raises ``SolverError("no critical point found ...")`` when the iteration
    diverges, leaves the chart or meets a degenerate Hessian.
    """
    z = np.zeros(3) if start is None else np.asarray(start, dtype=float).copy()
    for _ in range(max_iter):
        closed = chart.scalar_curvature_derivatives(z)
        if closed is None:
            curv = curvature_at(chart, z)
            grad = curv.dsc
            d2 = curv.hess_sc + np.einsum("kij,k->ij", chart.christoffel(z), curv.dsc)
        else:
            _, grad, d2 = closed
        scale = float(np.max(np.abs(d2)))
        if scale < 1e-12 or np.linalg.cond(d2) > 1e12:
            raise SolverError("no critical point found: Hess Sc is degenerate")
        if np.max(np.abs(grad)) <= tol * max(scale, 1.0):
            return z
        z = z - np.linalg.solve(d2, grad)
        if not np.linalg.norm(z) < chart.valid_radius:
            raise SolverError("no critical point found: Newton left the chart")
    raise SolverError("no critical point found: Newton did not converge", float(np.max(np.abs(grad))))
