"""Gauss-Legendre x uniform grids on S^2 and real spherical-harmonic transforms.

Real orthonormal harmonics without the Condon-Shortley phase::

    Y_l0      = P_l0(cos t)
    Y_lm      = sqrt(2) P_lm(cos t) cos(m p)      (m > 0)
    Y_l,-m    = sqrt(2) P_lm(cos t) sin(m p)      (m > 0)

where ``P_lm`` are associated Legendre functions normalised so that
``int_{-1}^{1} P_lm^2 dx = 1 / (2 pi)``.  Coefficient vectors are flat with
index ``l*l + l + m``, i.e. lexicographic in ``(l, m)`` with ``m = -l..l``.

Fields on the grid are flat along their first axis with node index
``t * n_phi + p`` (``t`` colatitude node, ``p`` longitude node).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_legendre

from .errors import ConfigError

DERIVS = ("f", "t", "p", "tt", "tp", "pp")


def n_coeffs(L: int) -> int:
    return (L + 1) ** 2


def lm_index(l: int, m: int) -> int:
    return l * l + l + m


def lm_arrays(L: int):
    """``(l, m)`` integer arrays in flat coefficient order."""
    ls = np.concatenate([np.full(2 * l + 1, l) for l in range(L + 1)])
    ms = np.concatenate([np.arange(-l, l + 1) for l in range(L + 1)])
    return ls, ms


def normalized_legendre(x, s, lmax: int, derivatives: bool = False):
    """Tables ``P[..., l, m]`` (and ``dP/dt``, ``d2P/dt2``) for ``0 <= m <= l <= lmax``.

    ``x = cos t`` and ``s = sin t`` are given separately so that ``s`` keeps its
    sign and precision near the poles.  Derivatives need ``s != 0``.
    """
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    P = np.zeros(x.shape + (lmax + 1, lmax + 1))
    P[..., 0, 0] = 1.0 / math.sqrt(4.0 * math.pi)
    for m in range(1, lmax + 1):
        P[..., m, m] = math.sqrt((2 * m + 1) / (2 * m)) * s * P[..., m - 1, m - 1]
    for m in range(0, lmax):
        P[..., m + 1, m] = math.sqrt(2 * m + 3) * x * P[..., m, m]
    for m in range(0, lmax + 1):
        for l in range(m + 2, lmax + 1):
            a = math.sqrt((4 * l * l - 1) / (l * l - m * m))
            b = math.sqrt(((l - 1) ** 2 - m * m) / (4 * (l - 1) ** 2 - 1))
            P[..., l, m] = a * (x * P[..., l - 1, m] - b * P[..., l - 2, m])
    if not derivatives:
        return P
    ls = np.arange(lmax + 1)[:, None]
    ms = np.arange(lmax + 1)[None, :]
    valid = ms <= ls
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(valid & (ls > 0), np.sqrt((2 * ls + 1) * (ls**2 - ms**2) / np.maximum(2 * ls - 1, 1)), 0.0)
    Pm1 = np.zeros_like(P)
    Pm1[..., 1:, :] = P[..., :-1, :]
    xe = x[..., None, None]
    se = s[..., None, None]
    dP = (ls * xe * P - c * Pm1) / se
    d2P = -(xe / se) * dP - (ls * (ls + 1) - ms**2 / se**2) * P
    dP = np.where(valid, dP, 0.0)
    d2P = np.where(valid, d2P, 0.0)
    return P, dP, d2P


@dataclass(eq=False)
class SphericalGrid:
    """Quadrature grid plus spectral transforms up to degree ``L``.

    Surfaces are represented with degree ``L``.  Nonlinear fields are analysed
    with the larger ``field_degree`` (the highest degree the grid resolves
    exactly), so that their derivatives carry no extra truncation.
    """

    n_theta: int
    n_phi: int
    L: int
    theta: np.ndarray = field(init=False, repr=False)
    phi: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_phi % 2:
            raise ConfigError("n_phi must be even")
        if self.n_phi < 2 * self.L + 2 or self.n_theta < self.L + 1:
            raise ConfigError(
                f"grid ({self.n_theta}, {self.n_phi}) cannot carry degree L={self.L}: "
                "need n_phi >= 2L+2 and n_theta >= L+1"
            )
        x, wt = roots_legendre(self.n_theta)
        x = x[::-1]  # colatitude increasing
        wt = wt[::-1]
        self._x = x
        self._s = np.sqrt((1.0 - x) * (1.0 + x))
        self.theta = np.arccos(x)
        self.phi = 2.0 * np.pi * np.arange(self.n_phi) / self.n_phi
        self._wtheta = wt
        self.weights = np.repeat(wt * (2.0 * np.pi / self.n_phi), self.n_phi)
        self.field_degree = min(self.n_theta - 1, (self.n_phi - 2) // 2)
        self._P, self._dP, self._d2P = normalized_legendre(x, self._s, self.field_degree, derivatives=True)
        self._lm_cache = {}

    # -- geometry of the unit sphere ------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return self.n_theta * self.n_phi

    @property
    def sin_theta(self) -> np.ndarray:
        return np.repeat(self._s, self.n_phi)

    def unit_sphere(self):
        """``omega`` and its angular derivatives, each of shape ``(K, 3)``."""
        st = np.repeat(self._s, self.n_phi)
        ct = np.repeat(self._x, self.n_phi)
        cp = np.tile(np.cos(self.phi), self.n_theta)
        sp = np.tile(np.sin(self.phi), self.n_theta)
        zero = np.zeros_like(st)
        om = np.stack([st * cp, st * sp, ct], -1)
        return {
            "f": om,
            "t": np.stack([ct * cp, ct * sp, -st], -1),
            "p": np.stack([-st * sp, st * cp, zero], -1),
            "tt": -om,
            "tp": np.stack([-ct * sp, ct * cp, zero], -1),
            "pp": np.stack([-st * cp, -st * sp, zero], -1),
        }

    def integrate_sphere(self, f):
        """Round unit-sphere quadrature over the node axis."""
        return np.tensordot(self.weights, f, axes=(0, 0))

    # -- transforms -----------------------------------------------------------------

    def _to_grid_layout(self, f):
        f = np.asarray(f, dtype=float)
        rest = f.shape[1:]
        g = f.reshape((self.n_theta, self.n_phi) + rest)
        return np.moveaxis(g, (0, 1), (-2, -1)), rest

    def _from_grid_layout(self, g, rest):
        g = np.moveaxis(g, (-2, -1), (0, 1))
        return g.reshape((self.n_nodes,) + rest)

    def _split(self, L):
        if L not in self._lm_cache:
            ls, ms = lm_arrays(L)
            self._lm_cache[L] = (ls, ms)
        return self._lm_cache[L]

    def analyze(self, f, L: int | None = None):
        """Project node values onto harmonics of degree ``<= L`` (default: the surface ``L``)."""
        L = self.L if L is None else L
        if L > self.field_degree:
            raise ConfigError(f"degree {L} exceeds the grid's exact degree {self.field_degree}")
        g, rest = self._to_grid_layout(f)
        F = np.fft.rfft(g, axis=-1)[..., : L + 1] * (2.0 * np.pi / self.n_phi)
        # int f cos(m p) dp = Re F_m, int f sin(m p) dp = -Im F_m
        Fw = F * self._wtheta[:, None]
        P = self._P[:, : L + 1, : L + 1]  # [t, l, m]
        C = np.einsum("...tm,tlm->...lm", Fw.real, P)
        S = np.einsum("...tm,tlm->...lm", -Fw.imag, P)
        ls, ms = self._split(L)
        am = np.abs(ms)
        out = np.where(ms >= 0, C[..., ls, am], S[..., ls, am])
        out = out * np.where(ms == 0, 1.0, math.sqrt(2.0))
        return np.moveaxis(out, -1, 0) if rest else out

    def synthesize(self, coeffs, derivs=("f",)):
        """Evaluate a coefficient array (first axis = coefficients) and its angular derivatives.

        Returns a dict keyed by entries of ``derivs`` (subset of ``DERIVS``).
        """
        a = np.asarray(coeffs, dtype=float)
        nc = a.shape[0]
        L = int(round(math.sqrt(nc))) - 1
        if n_coeffs(L) != nc or L > self.field_degree:
            raise ConfigError(f"coefficient vector of length {nc} does not match this grid")
        rest = a.shape[1:]
        a = np.moveaxis(a, 0, -1)
        ls, ms = self._split(L)
        am = np.abs(ms)
        scale = np.where(ms == 0, 1.0, math.sqrt(2.0))
        C = np.zeros(rest + (L + 1, L + 1))
        S = np.zeros(rest + (L + 1, L + 1))
        pos = ms >= 0
        C[..., ls[pos], am[pos]] = a[..., pos] * scale[pos]
        neg = ms < 0
        S[..., ls[neg], am[neg]] = a[..., neg] * scale[neg]
        tables = {0: self._P, 1: self._dP, 2: self._d2P}
        mvec = np.arange(L + 1)
        out = {}
        for d in derivs:
            nt = d.count("t")
            npd = d.count("p")
            T = tables[nt][:, : L + 1, : L + 1]
            Ct = np.einsum("...lm,tlm->...tm", C, T)
            St = np.einsum("...lm,tlm->...tm", S, T)
            Z = Ct - 1j * St
            Z = Z * (1j * mvec) ** npd
            X = Z * (self.n_phi / 2.0)
            X[..., 0] = Z[..., 0] * self.n_phi
            pad = self.n_phi // 2 + 1 - (L + 1)
            if pad > 0:
                X = np.concatenate([X, np.zeros(X.shape[:-1] + (pad,), dtype=complex)], axis=-1)
            g = np.fft.irfft(X, n=self.n_phi, axis=-1)
            out[d] = self._from_grid_layout(g, rest)
        return out

    def derivatives(self, f, derivs=("t", "p"), L: int | None = None):
        """Pseudospectral angular derivatives of node values ``f``."""
        L = self.field_degree if L is None else L
        return self.synthesize(self.analyze(f, L), derivs)

    def project(self, f, L: int | None = None):
        """Band-limit node values to degree ``L``."""
        return self.synthesize(self.analyze(f, L))["f"]

    def evaluate(self, coeffs, directions):
        """Evaluate a scalar coefficient vector at arbitrary unit vectors ``(N, 3)``."""
        a = np.asarray(coeffs, dtype=float)
        L = int(round(math.sqrt(a.shape[0]))) - 1
        d = np.asarray(directions, dtype=float)
        d = d / np.linalg.norm(d, axis=-1, keepdims=True)
        x = d[..., 2]
        s = np.hypot(d[..., 0], d[..., 1])
        ph = np.arctan2(d[..., 1], d[..., 0])
        P = normalized_legendre(x, s, L)
        ls, ms = lm_arrays(L)
        am = np.abs(ms)
        Pv = P[..., ls, am]
        trig = np.where(ms > 0, math.sqrt(2.0) * np.cos(am * ph[..., None]), 0.0)
        trig = np.where(ms < 0, math.sqrt(2.0) * np.sin(am * ph[..., None]), trig)
        trig = np.where(ms == 0, 1.0, trig)
        return np.einsum("...k,k->...", Pv * trig, a)

    def basis(self, L: int | None = None):
        """Dense matrix of ``Y_lm`` at the nodes, shape ``(K, (L+1)^2)``."""
        L = self.L if L is None else L
        return self.synthesize(np.eye(n_coeffs(L)))["f"]


def make_grid(n_theta: int, n_phi: int, L: int) -> SphericalGrid:
    return SphericalGrid(int(n_theta), int(n_phi), int(L))
