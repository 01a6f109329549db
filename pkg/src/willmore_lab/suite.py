"""Dyadic-ladder estimate harness.

Each level: geodesic sphere about the seed, constrained Willmore solve,
geometric centre, then every estimate evaluated at the converged surface.
Chart-invariant quantities (norms of tensors built from H, A, Ric, ...) are
evaluated in the original chart; ``Sc`` and ``|grad Sc|`` are taken at the
geometric centre ``p0``; moments live in normal coordinates about ``p0``.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields as dc_fields

import numpy as np

from .ambient import MetricChart, critical_point_of_scalar_curvature, curvature_at
from .barycenter import CenterParams, diameter, geometric_center, moment_suite
from .errors import ConfigError, DegeneracyError, SolverError, WillmoreLabError
from .flow import FlowParams, geodesic_sphere, minimize
from .functionals import report_from_fields
from .sphere import SphericalGrid, lm_arrays, make_grid
from .surface import (
    Surface,
    geometry,
    integrate,
    l2_norm,
    rough_laplacian,
    simons_terms,
    sup_norm,
    surface_gradient,
)


def default_areas(n_levels: int = 8, r0: float = 0.08) -> list[float]:
    return [4.0 * math.pi * (r0 * 2.0 ** (-k / 2.0)) ** 2 for k in range(n_levels)]


@dataclass
class EstimateRecord:
    level: int
    status: str
    R: float = math.nan
    area: float = math.nan
    n_theta: int = 0
    n_phi: int = 0
    L: int = 0
    steps: int = 0
    # estimate left-hand sides
    H_dev: float = math.nan  # sup |H - 2/R|
    H2_dev: float = math.nan  # sup |H^2/2 - 8 pi/|S| - 2/3 Ric(nu,nu) + 5/9 Sc(p0)|
    gradH_omega: float = math.nan  # || grad H - 2/3 omega ||_L2
    Acirc_corr: float = math.nan  # || Acirc + 4/3 H^-1 Tcirc ||_L2
    Acirc_l2: float = math.nan
    Acirc_linf: float = math.nan
    lambda_dev: float = math.nan  # |lambda* + Sc(p0)/3|
    gradSc_p0: float = math.nan
    S_eq: float = math.nan  # || Lap S - H^2 S / 2 ||_L2
    simons: float = math.nan
    ric_int_dev: float = math.nan  # |int Ric(nu,nu) dmu - |S| Sc(p0)/3|
    diam_ratio: float = math.nan
    enclosed: str = ""  # "true", "false" or "" when undefined
    margin: float = math.nan
    # centre and moments
    dist_band: float = math.nan
    dist_ratio: float = math.nan  # dist_band / (R^3 + R ||Acirc||)
    moment_g_rel: float = math.nan  # |int y dmu_g| / area
    moment_e: float = math.nan
    moment_e_ratio: float = math.nan  # |moment_e| / (diam^3 area)
    odd1: float = math.nan
    odd3: float = math.nan
    odd3_ratio: float = math.nan  # odd3 / (R^3 + R ||Acirc||)
    center_grad: float = math.nan
    hessian_positive: str = ""
    # functionals and bookkeeping
    W: float = math.nan
    U: float = math.nan
    V: float = math.nan
    gb_residual: float = math.nan
    el_l2: float = math.nan
    scaled_residual: float = math.nan
    lambda_opt: float = math.nan
    sc_p0: float = math.nan
    p0_1: float = math.nan
    p0_2: float = math.nan
    p0_3: float = math.nan
    c_1: float = math.nan
    c_2: float = math.nan
    c_3: float = math.nan
    spectral_tail: float = math.nan
    flow_residual: float = math.nan  # final Galerkin residual of the solve (run metadata)
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "converged"


RECORD_FIELDS = tuple(f.name for f in dc_fields(EstimateRecord))
_INT_FIELDS = {"level", "n_theta", "n_phi", "L", "steps"}
_STR_FIELDS = {"status", "enclosed", "hessian_positive", "message"}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(float(v))  # numpy scalars repr as np.float64(...)
    return str(v)


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_FIELDS)
    for r in records:
        w.writerow([_fmt(getattr(r, k)) for k in RECORD_FIELDS])
    return buf.getvalue()


def records_from_csv(text: str) -> list[EstimateRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ConfigError("records.csv: empty file")
    header = rows[0]
    missing = [k for k in ("level", "status", "R") if k not in header]
    if missing:
        raise ConfigError(f"records.csv: header lacks {missing}")
    unknown = set(header) - set(RECORD_FIELDS)
    if unknown:
        raise ConfigError(f"records.csv: unknown columns {sorted(unknown)}")
    out = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ConfigError(f"records.csv line {i}: expected {len(header)} fields, got {len(row)}")
        kw = {}
        for k, v in zip(header, row):
            try:
                if k in _INT_FIELDS:
                    kw[k] = int(v)
                elif k in _STR_FIELDS:
                    kw[k] = v
                else:
                    kw[k] = float(v) if v != "" else math.nan
            except ValueError as exc:
                raise ConfigError(f"records.csv line {i}, column {k}: {exc}") from exc
        out.append(EstimateRecord(**kw))
    return out


# ---------------------------------------------------------------------------
# single-surface evaluation


def enclosed_critical_point(chart: MetricChart, surface: Surface, grid: SphericalGrid, z=None):
    """``(inside, margin)`` for the critical point ``z`` of Sc.

    ``margin = rho(omega_z) - |z - c|`` along the ray from the surface centre
    ``c`` through ``z``; positive means ``z`` is enclosed.  Without ``z`` the
    critical point is located by Newton from the chart origin.
    """
    if z is None:
        z = critical_point_of_scalar_curvature(chart)
    d = np.asarray(z, dtype=float) - surface.center
    dn = float(np.linalg.norm(d))
    if dn < 1e-300:
        rho = float(np.min(surface.radial(grid, ("f",))["f"]))
    else:
        rho = float(surface.radius_along(grid, (d / dn)[None, :])[0])
    margin = rho - dn
    return bool(margin > 0), margin


def _spectral_tail(surface: Surface) -> float:
    """Relative size of the top three degrees of the radial function."""
    ls, _ = lm_arrays(surface.L)
    top = surface.coeffs[ls > surface.L - 3]
    return float(np.linalg.norm(top) / abs(surface.coeffs[0]))


def estimate_record(
    chart: MetricChart,
    surface: Surface,
    grid: SphericalGrid,
    center: CenterParams = CenterParams(),
    *,
    level: int = 0,
    status: str = "converged",
    steps: int = 0,
    zstar=None,
    message: str = "",
) -> EstimateRecord:
    fields = geometry(chart, surface, grid)
    rep = report_from_fields(fields, grid)
    R, area = rep.R, rep.area
    H = fields.H
    rec = EstimateRecord(
        level=level, status=status, R=R, area=area, n_theta=grid.n_theta, n_phi=grid.n_phi,
        L=surface.L, steps=steps, message=message,
    )
    ctr = geometric_center(chart, surface, grid, center, fields=fields)
    p0 = ctr.p0
    curv = curvature_at(chart, p0)
    sc0 = float(curv.sc)

    rec.H_dev = float(np.max(np.abs(H - 2.0 / R)))
    rec.H2_dev = float(np.max(np.abs(0.5 * H**2 - 8.0 * math.pi / area - 2.0 / 3.0 * fields.ric_nn + 5.0 / 9.0 * sc0)))
    rec.gradH_omega = l2_norm(fields, grid, surface_gradient(fields, grid, H) - 2.0 / 3.0 * fields.omega)
    S = fields.Acirc + (4.0 / 3.0) * fields.Tcirc / H[:, None, None]
    rec.Acirc_corr = l2_norm(fields, grid, S)
    rec.Acirc_l2 = math.sqrt(max(rep.U, 0.0))
    rec.Acirc_linf = sup_norm(fields, fields.Acirc)
    rec.lambda_dev = abs(rep.lambda_opt + sc0 / 3.0)
    rec.gradSc_p0 = curv.grad_sc_norm
    rec.S_eq = l2_norm(fields, grid, rough_laplacian(fields, grid, S) - 0.5 * (H**2)[:, None, None] * S)
    lhs, rhs = simons_terms(fields, grid)
    rec.simons = l2_norm(fields, grid, lhs - rhs)

    rec.ric_int_dev = abs(float(integrate(fields, grid, fields.ric_nn)) - area * sc0 / 3.0)

    pic = ctr.picture
    diam = diameter(chart, fields, pic, center.geodesic)
    rec.diam_ratio = diam / R
    try:
        inside, margin = enclosed_critical_point(chart, surface, grid, zstar)
        rec.enclosed, rec.margin = ("true" if inside else "false"), margin
    except SolverError:
        pass  # no nondegenerate critical point of Sc: left undefined

    scale = R**3 + R * rec.Acirc_l2
    rec.dist_band = ctr.dist_band
    rec.dist_ratio = ctr.dist_band / scale
    rec.moment_g_rel = float(np.linalg.norm(ctr.moment_g)) / area
    rec.moment_e = float(np.linalg.norm(ctr.moment_e))
    rec.moment_e_ratio = rec.moment_e / (diam**3 * area)
    mom = moment_suite(pic, R, ks=(0, 1))
    rec.odd1, rec.odd3 = mom[1], mom[3]
    rec.odd3_ratio = mom[3] / scale
    rec.center_grad = ctr.grad_norm / area
    rec.hessian_positive = "" if ctr.hessian_positive is None else ("true" if ctr.hessian_positive else "false")

    rec.W, rec.U, rec.V = rep.W, rep.U, rep.V
    rec.gb_residual = rep.gb_residual
    rec.el_l2 = rep.el_l2
    rec.scaled_residual = rep.el_l2 * R**2
    rec.lambda_opt = rep.lambda_opt
    rec.sc_p0 = sc0
    rec.p0_1, rec.p0_2, rec.p0_3 = (float(v) for v in p0)
    rec.c_1, rec.c_2, rec.c_3 = (float(v) for v in surface.center)
    rec.spectral_tail = _spectral_tail(surface)
    return rec


# ---------------------------------------------------------------------------
# the ladder


@dataclass
class LadderParams:
    grid: tuple = (32, 64, 16)
    fine_grid: tuple = (48, 96, 24)
    n_fine: int = 2  # the smallest n_fine levels use fine_grid
    flow: dict = field(default_factory=dict)  # FlowParams fields except target_area
    center: CenterParams = field(default_factory=CenterParams)
    seed_offset: tuple = (0.1, -0.05, 0.05)  # initial centre offset in units of R
    perturbation_seed: int | None = None
    perturbation: float = 0.02  # relative amplitude of the random l >= 2 perturbation

    def __post_init__(self):
        for name in ("grid", "fine_grid"):
            g = getattr(self, name)
            if len(g) != 3:
                raise ConfigError(f"ladder.{name}: expected (n_theta, n_phi, L)")
        if self.n_fine < 0:
            raise ConfigError("ladder.n_fine must be >= 0")
        if len(self.seed_offset) != 3:
            raise ConfigError("ladder.seed_offset: expected 3 numbers")
        allowed = {f.name for f in dc_fields(FlowParams)} - {"target_area"}
        unknown = set(self.flow) - allowed
        if unknown:
            raise ConfigError(f"flow: unknown keys {sorted(unknown)}")


@dataclass
class LevelResult:
    record: EstimateRecord
    surface: Surface | None
    trace_csv: str


def run_level(chart: MetricChart, seed, area: float, level: int, grid_spec, params: LadderParams, zstar=None) -> LevelResult:
    """One ladder level; numerical failures become a ``failed`` record."""
    grid = make_grid(*grid_spec)
    R = math.sqrt(area / (4.0 * math.pi))
    surf = None
    trace_csv = ""
    try:
        p_init = np.asarray(seed, dtype=float) + R * np.asarray(params.seed_offset, dtype=float)
        init = geodesic_sphere(chart, p_init, R, grid, params.center.geodesic)
        if params.perturbation_seed is not None:
            rng = np.random.default_rng([params.perturbation_seed, level])
            ls, _ = lm_arrays(init.L)
            noise = rng.standard_normal(init.coeffs.size) * (ls >= 2) / np.maximum(ls, 1) ** 2
            init = Surface(init.center, init.coeffs + params.perturbation * R * math.sqrt(4 * math.pi) * noise)
        fp = FlowParams(target_area=area, **params.flow)
        surf, trace = minimize(chart, init, fp, grid)
        trace_csv = trace.to_csv()
        rec = estimate_record(
            chart, surf, grid, params.center, level=level, status=trace.status,
            steps=len(trace.records) - 1, zstar=zstar, message=trace.message,
        )
        rec.flow_residual = float(trace.records[-1]["galerkin_residual"])
    except (WillmoreLabError, FloatingPointError, np.linalg.LinAlgError) as exc:
        rec = EstimateRecord(
            level=level, status="failed", R=R, area=area, n_theta=grid.n_theta,
            n_phi=grid.n_phi, L=grid.L, message=f"{type(exc).__name__}: {exc}",
        )
    return LevelResult(rec, surf, trace_csv)


def _run_level_star(args):
    return run_level(*args)


def ladder_grids(n_levels: int, params: LadderParams) -> list:
    return [tuple(params.fine_grid) if k >= n_levels - params.n_fine else tuple(params.grid) for k in range(n_levels)]


def run_ladder(chart: MetricChart, center_seed, areas, params: LadderParams = LadderParams(), jobs: int = 1, zstar=None) -> list[LevelResult]:
    """Run every level (optionally in parallel processes) and return them in order."""
    areas = [float(a) for a in areas]
    if len(areas) == 0:
        raise ConfigError("ladder: no areas given")
    if any(not b < a for a, b in zip(areas, areas[1:])) or min(areas) <= 0:
        raise ConfigError("ladder: areas must be positive and strictly decreasing")
    if math.sqrt(areas[0] / (4 * math.pi)) > chart.valid_radius / 8:
        raise ConfigError("ladder: largest area radius exceeds valid_radius / 8")
    grids = ladder_grids(len(areas), params)
    tasks = [(chart, center_seed, a, k, grids[k], params, zstar) for k, a in enumerate(areas)]
    if jobs <= 1 or len(tasks) == 1:
        return [_run_level_star(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as ex:
        return list(ex.map(_run_level_star, tasks))


# ---------------------------------------------------------------------------
# rate fits


@dataclass(frozen=True)
class RateSpec:
    name: str  # EstimateRecord field
    exponent: float
    scale_power: float  # the probe is O(R**scale_power) for a generic surface
    label: str
    probe: str = ""  # field tested for vanishing (default: name)


RATE_SPECS = (
    RateSpec("H_dev", 1, -1, "sup|H - 2/R|"),
    RateSpec("Acirc_linf", 1, -1, "||Acirc||_Linf"),
    RateSpec("Acirc_l2", 2, 0, "||Acirc||_L2"),
    RateSpec("H2_dev", 1, -2, "sup|H^2/2 - 8pi/|S| - 2/3 Ric(nu,nu) + 5/9 Sc(p0)|"),
    RateSpec("gradH_omega", 2, -1, "||grad H - 2/3 omega||_L2"),
    RateSpec("Acirc_corr", 3, 0, "||Acirc + 4/3 H^-1 Tcirc||_L2"),
    RateSpec("lambda_dev", 1, -2, "|lambda* + Sc(p0)/3|"),
    RateSpec("gradSc_p0", 2, 0, "|grad Sc(p0)|"),
    RateSpec("dist_band", 3, 1, "max|dist(p0,.) - R|"),
    RateSpec("ric_int_dev", 3, 2, "|int Ric(nu,nu) - |S| Sc(p0)/3|"),
)

# constants that must stay bounded as R -> 0: fitted with exponent 0
BOUND_SPECS = (
    RateSpec("dist_ratio", 0, 1, "max|dist(p0,.) - R| / (R^3 + R||Acirc||_L2)", "dist_band"),
    RateSpec("odd3_ratio", 0, 2, "max degree-3 odd moment / (R^3 + R||Acirc||_L2)", "odd3"),
    RateSpec("moment_e_ratio", 0, 3, "|int y dmu_E| / (diam^3 area)", "moment_e"),
)

VANISH_TOL = 1e-7  # on max over levels of |probe| / R**scale_power


@dataclass
class RateFit:
    name: str
    label: str
    exponent: float
    slope: float
    constant: float
    residuals: list
    levels: list
    status: str  # PASS, FAIL or N/A
    note: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def fit_power_law(R, v):
    """Least-squares line through ``(log R, log v)``: ``(slope, constant, residuals)``."""
    x = np.log(np.asarray(R, dtype=float))
    y = np.log(np.asarray(v, dtype=float))
    A = np.stack([x, np.ones_like(x)], axis=1)
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - (slope * x + icpt)
    return float(slope), float(math.exp(icpt)), [float(r) for r in res]


def fit_rates(records, specs=RATE_SPECS + BOUND_SPECS, min_levels: int = 3, tolerance: float = 0.3) -> list[RateFit]:
    """Fit ``log v = slope log R + const`` per estimate over the converged levels.

    An estimate whose values all vanish to round-off (below ``VANISH_TOL``
    times its natural size ``R**scale_power``) has no measurable rate and is
    reported ``N/A``; the bound it expresses then holds trivially.
    """
    good = [r for r in records if r.ok]
    if len(good) < min_levels:
        raise DegeneracyError(f"insufficient levels: {len(good)} converged, need >= {min_levels}")
    out = []
    for sp in specs:
        pts = [(r.level, r.R, getattr(r, sp.name)) for r in good]
        pts = [p for p in pts if math.isfinite(p[2])]
        levels = [p[0] for p in pts]
        if len(pts) < min_levels:
            out.append(RateFit(sp.name, sp.label, sp.exponent, math.nan, math.nan, [], levels, "N/A", "undefined at too many levels"))
            continue
        probe = sp.probe or sp.name
        rel = max(abs(getattr(r, probe)) / r.R**sp.scale_power for r in good if r.level in levels)
        if rel <= VANISH_TOL:
            out.append(RateFit(sp.name, sp.label, sp.exponent, math.nan, math.nan, [], levels, "N/A", f"vanishes to round-off (max relative size {rel:.1e})"))
            continue
        pos = [p for p in pts if p[2] > 0]
        if len(pos) < min_levels:
            out.append(RateFit(sp.name, sp.label, sp.exponent, math.nan, math.nan, [], levels, "N/A", "too few positive values"))
            continue
        slope, const, res = fit_power_law([p[1] for p in pos], [p[2] for p in pos])
        status = "PASS" if slope >= sp.exponent - tolerance else "FAIL"
        out.append(RateFit(sp.name, sp.label, sp.exponent, slope, const, res, [p[0] for p in pos], status))
    return out


def rate_table(fits) -> str:
    lines = [f"{'estimate':<16} {'exponent':>8} {'slope':>9} {'constant':>11}  status"]
    for f in fits:
        lines.append(f"{f.name:<16} {f.exponent:>8g} {f.slope:>9.4f} {f.constant:>11.4e}  {f.status}{'  (' + f.note + ')' if f.note else ''}")
    return "\n".join(lines)


ERROR_BUDGET_FIELDS = ("level", "R", "n_theta", "n_phi", "L", "status", "spectral_tail", "scaled_residual", "gb_residual", "simons", "center_grad", "moment_g_rel")


def error_budget(records) -> str:
    """Discretisation / solver error indicators per level as CSV text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ERROR_BUDGET_FIELDS)
    for r in records:
        w.writerow([_fmt(getattr(r, k)) for k in ERROR_BUDGET_FIELDS])
    return buf.getvalue()


def dat_series(records, name: str) -> str:
    """Two-column ``R value`` text for plotting, converged levels only."""
    rows = [f"{r.R!r} {getattr(r, name)!r}" for r in records if r.ok and math.isfinite(getattr(r, name))]
    return f"# R {name}\n" + "\n".join(rows) + ("\n" if rows else "")
