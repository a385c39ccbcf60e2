"""Curve shortening on a punctured cylinder and its reduced ODE system.

A graph curve ``y = f(x)`` on the cylinder of circumference ``L`` evolves by
``f_t = rho(x, f) f_xx`` where ``rho`` vanishes quadratically at the
punctures. Near-puncture heights ``y_i = |f(x_i)| / pi`` follow, on a center
manifold, a Lotka-Volterra type system that is integrated here in the
autonomous coordinates ``v_i = log(t y_i)``, ``s = log t``.

Indexing: punctures ``x_0 < ... < x_{n-1}``; segment ``k`` is
``[x_k, x_{k+1}]`` (cyclically); reduced variable ``k`` sits at the puncture
``x_{k+1}`` between segments ``k`` and ``k + 1``.
"""

from __future__ import annotations

import logging
import math
import typing
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt
from scipy import integrate, interpolate, sparse
from scipy.sparse import linalg as sparse_linalg

from ._errors import BlowUpError, ConsistencyError, DomainError, IntegrationError, StiffnessError
from ._lattice import OrientedCycleGraph, rationalize, weight_grading

logger = logging.getLogger(__name__)

RealArray = npt.NDArray[np.float64]

#: v-coordinates above this value mean y is not decaying like 1/t.
BLOW_UP = 50.0


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CylinderConfig:
    length: float
    punctures: tuple[float, ...]
    rho: str = "quadratic"
    rho_constant: float = 1.0
    boundary: str = "periodic"

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    @property
    def n(self) -> int:
        return len(self.punctures)

    @property
    def masses(self) -> tuple[float, ...]:
        """Segment lengths; the last one wraps around when periodic."""
        x = self.punctures
        out = [b - a for a, b in zip(x, x[1:])]
        if self.periodic:
            out.append(x[0] + self.length - x[-1])
        return tuple(out)

    @property
    def reduced_punctures(self) -> tuple[int, ...]:
        """Puncture indices carrying reduced variables, in variable order."""
        if self.periodic:
            return tuple((k + 1) % self.n for k in range(self.n))
        return tuple(range(1, self.n - 1))

    def distance(self, x: RealArray, center: float) -> RealArray:
        d = np.abs(np.asarray(x, dtype=float) - center) % self.length
        return typing.cast(RealArray, np.minimum(d, self.length - d))

    def density(self, x: RealArray, y: RealArray) -> RealArray:
        """rho(x, y) = (sum_i 1 / (dist(x, x_i)^2 + y^2))^-1."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.rho == "constant" or not self.punctures:
            return typing.cast(RealArray, np.full(np.broadcast(x, y).shape, self.rho_constant))
        with np.errstate(divide="ignore"):
            total = sum(1.0 / (self.distance(x, c) ** 2 + y**2) for c in self.punctures)
            return typing.cast(RealArray, 1.0 / total)

    def density_dy(self, x: RealArray, y: RealArray) -> RealArray:
        """Partial derivative of rho in y."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.rho == "constant" or not self.punctures:
            return typing.cast(RealArray, np.zeros(np.broadcast(x, y).shape))
        rho = self.density(x, y)
        terms = sum(2.0 * y / (self.distance(x, c) ** 2 + y**2) ** 2 for c in self.punctures)
        return typing.cast(RealArray, rho**2 * terms)

    def cycle_graph(self, signs: typing.Sequence[int]) -> OrientedCycleGraph:
        return OrientedCycleGraph(
            tuple(rationalize(m) for m in self.masses), tuple(signs), periodic=self.periodic
        )


def build_cylinder(
    length: float,
    punctures: typing.Sequence[float],
    *,
    rho: str = "quadratic",
    rho_constant: float = 1.0,
    boundary: str = "periodic",
) -> CylinderConfig:
    if length <= 0:
        raise DomainError("circumference must be positive")
    if rho not in ("quadratic", "constant"):
        raise DomainError(f"unknown density {rho!r}")
    if boundary not in ("periodic", "dirichlet"):
        raise DomainError(f"unknown boundary {boundary!r}")
    x = tuple(float(p) for p in punctures)
    if any(b <= a for a, b in zip(x, x[1:])):
        raise DomainError("punctures must be distinct and sorted")
    if x and (x[0] < 0 or x[-1] >= length):
        raise DomainError("punctures must lie in [0, L)")
    if boundary == "dirichlet" and len(x) < 3:
        raise DomainError("a pinned curve needs an interior puncture")
    cfg = CylinderConfig(length, x, rho, rho_constant, boundary)
    if rho == "quadratic" and x:
        sample = np.linspace(0.0, length, 997, endpoint=False) + 0.5 * length / 997
        heights = np.linspace(-1.0, 1.0, 7)
        values = cfg.density(sample[:, None], heights[None, :])
        off = np.min([cfg.distance(sample, c) for c in x], axis=0)[:, None] ** 2 + heights[None, :] ** 2 > 0
        if np.any(values[off] <= 0):
            raise ConsistencyError("density is not positive off the punctures")
        delta = 1e-3 * min(cfg.masses)
        for c in x:
            ratio = float(cfg.density(np.array(c + delta), np.array(0.0))) / delta**2
            if abs(ratio - 1.0) > 1e-4:
                raise ConsistencyError(f"density is not quadratic at x={c} (ratio {ratio})")
    return cfg


@dataclass(frozen=True, eq=False)
class Grid:
    nodes: RealArray
    punctures: tuple[int, ...]
    length: float
    periodic: bool

    def spacing(self) -> tuple[RealArray, RealArray]:
        x = self.nodes
        if self.periodic:
            right = np.roll(x, -1) - x
            right[-1] += self.length
            left = x - np.roll(x, 1)
            left[0] += self.length
        else:
            right = np.append(np.diff(x), np.nan)
            left = np.insert(np.diff(x), 0, np.nan)
        return left, right

    def second_difference(self) -> sparse.csr_matrix:
        """2[(f+ - f)/h+ - (f - f-)/h-] / (h+ + h-), zero rows at pinned ends."""
        n = len(self.nodes)
        left, right = self.spacing()
        lower = 2.0 / (left * (left + right))
        upper = 2.0 / (right * (left + right))
        diag = -2.0 / (left * right)
        rows = np.concatenate([np.arange(n)] * 3)
        cols = np.concatenate([(np.arange(n) - 1) % n, np.arange(n), (np.arange(n) + 1) % n])
        data = np.concatenate([lower, diag, upper])
        if not self.periodic:
            keep = (rows != 0) & (rows != n - 1)
            rows, cols, data = rows[keep], cols[keep], data[keep]
        return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))


def _one_sided(span: float, h_min: float, h_max: float, ratio: float) -> list[float]:
    out = []
    d, step = 0.0, h_min
    while d < 0.5 * span:
        out.append(d)
        d += step
        step = min(step * ratio, h_max)
    return out


def grid(
    cfg: CylinderConfig,
    *,
    ratio: float = 1.15,
    h_min: float | None = None,
    h_max: float | None = None,
    uniform: int = 400,
) -> Grid:
    """Nodes clustered geometrically toward every puncture."""
    length = cfg.length
    if not cfg.punctures:
        if not cfg.periodic:
            raise DomainError("a pinned curve needs punctures")
        nodes = np.linspace(0.0, length, uniform, endpoint=False)
        return Grid(nodes, (), length, True)
    h_min = 1e-4 * length if h_min is None else h_min
    h_max = length / 200 if h_max is None else h_max
    x = cfg.punctures
    ends = list(zip(x, x[1:]))
    if cfg.periodic:
        ends.append((x[-1], x[0] + length))
    points: list[float] = []
    for a, b in ends:
        points.extend(a + d for d in _one_sided(b - a, h_min, h_max, ratio))
        points.extend(b - d for d in _one_sided(b - a, h_min, h_max, ratio) if d > 0)
    if not cfg.periodic:
        points.append(x[-1])
    raw = np.array(points) % length if cfg.periodic else np.array(points)
    raw = np.sort(raw)
    keep = np.concatenate([[True], np.diff(raw) > 0.5 * h_min])
    nodes = raw[keep]
    if cfg.periodic and nodes[-1] > length - 0.5 * h_min:
        nodes = nodes[:-1]
    index = []
    for c in x:
        i = int(np.argmin(np.abs(nodes - c)))
        nodes[i] = c
        index.append(i)
    logger.debug("grid has %d nodes", len(nodes))
    return Grid(nodes, tuple(index), length, cfg.periodic)


@dataclass(frozen=True, eq=False)
class CurveState:
    grid: Grid
    values: RealArray
    t: float = 0.0

    def __post_init__(self) -> None:
        if len(self.values) != len(self.grid.nodes):
            raise DomainError("one value per grid node")
        if any(self.values[i] == 0 for i in self.grid.punctures):
            raise DomainError("the curve passes through a puncture")

    def signs(self) -> tuple[int, ...]:
        return tuple(int(np.sign(self.values[i])) for i in self.grid.punctures)


def initial_curve(
    cfg: CylinderConfig,
    g: Grid,
    *,
    fourier: typing.Sequence[tuple[int, float, float]] = (),
    puncture_values: typing.Sequence[float] | None = None,
) -> CurveState:
    """Curve from Fourier terms ``(k, a_k, b_k)`` or a spline through puncture heights."""
    x = g.nodes
    if puncture_values is not None:
        if len(puncture_values) != cfg.n:
            raise DomainError("one height per puncture")
        knots = list(cfg.punctures)
        heights = list(puncture_values)
        if cfg.periodic:
            knots.append(knots[0] + cfg.length)
            heights.append(heights[0])
            spline = interpolate.CubicSpline(knots, heights, bc_type="periodic")
            shifted = np.where(x < knots[0], x + cfg.length, x)
            return CurveState(g, np.asarray(spline(shifted), dtype=float))
        spline = interpolate.CubicSpline(knots, heights)
        return CurveState(g, np.asarray(spline(x), dtype=float))
    values = np.zeros_like(x)
    for k, a, b in fourier:
        phase = 2.0 * np.pi * k * x / cfg.length
        values += a * np.cos(phase) + b * np.sin(phase)
    return CurveState(g, values)


# ---------------------------------------------------------------------------
# PDE
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SignFlip:
    t: float
    puncture: int


@dataclass(frozen=True, eq=False)
class PdeTrajectory:
    grid: Grid
    times: RealArray
    values: list[RealArray]
    event: SignFlip | None = None
    steps: int = 0

    def state(self, i: int) -> CurveState:
        return CurveState(self.grid, self.values[i], float(self.times[i]))


def _backward_euler(
    cfg: CylinderConfig,
    x: RealArray,
    d2: sparse.csr_matrix,
    f: RealArray,
    dt: float,
    *,
    max_iterations: int = 12,
) -> RealArray | None:
    eye = sparse.identity(len(f), format="csr")
    new = f.copy()
    for _ in range(max_iterations):
        curvature = d2 @ new
        residual = new - f - dt * cfg.density(x, new) * curvature
        jac = eye - dt * (
            sparse.diags(cfg.density(x, new)) @ d2 + sparse.diags(cfg.density_dy(x, new) * curvature)
        )
        delta = sparse_linalg.spsolve(jac.tocsc(), residual)
        if not np.all(np.isfinite(delta)):
            return None
        new = new - delta
        if np.max(np.abs(delta)) <= 1e-10 * (1.0 + np.max(np.abs(new))):
            return new
    return None


def integrate_pde(
    cfg: CylinderConfig,
    f0: CurveState,
    t_end: float,
    *,
    t_eval: typing.Sequence[float] | None = None,
    max_step: float = math.inf,
    first_step: float = 1e-6,
) -> PdeTrajectory:
    """Backward Euler with Newton on f_t = rho(x, f) f_xx.

    The step grows by 1.2 after every accepted step, never beyond ``0.02 t``
    or ``max_step``, and halves when Newton fails. A sign change of ``f`` at
    a puncture ends the run with a :class:`SignFlip` event.
    """
    g = f0.grid
    x = g.nodes
    d2 = g.second_difference()
    signs = np.sign(f0.values[list(g.punctures)])
    stops = sorted(float(s) for s in (t_eval if t_eval is not None else np.geomspace(min(1e-3, t_end), t_end, 60)))
    if stops and (stops[0] <= 0 or stops[-1] > t_end):
        raise DomainError("sample times must lie in (0, t_end]")
    times, values = [0.0], [f0.values.copy()]
    t, f, dt = 0.0, f0.values.copy(), first_step
    halvings = 0
    steps = 0
    event = None
    while stops:
        target = stops[0]
        step = min(dt, target - t, max(0.02 * t, first_step), max_step)
        new = _backward_euler(cfg, x, d2, f, step)
        if new is None:
            halvings += 1
            dt = 0.5 * step
            if halvings > 30:
                raise StiffnessError("Newton iteration keeps failing", t, step)
            continue
        halvings = 0
        steps += 1
        t += step
        f = new
        flipped = np.flatnonzero(np.sign(f[list(g.punctures)]) != signs)
        if flipped.size:
            event = SignFlip(t, int(flipped[0]))
            logger.warning("curve crossed puncture %d at t=%g", event.puncture, t)
            times.append(t)
            values.append(f.copy())
            break
        if t >= target * (1 - 1e-12):
            t = target
            stops.pop(0)
            times.append(t)
            values.append(f.copy())
        dt = 1.2 * step
    logger.debug("pde reached t=%g in %d steps", t, steps)
    return PdeTrajectory(g, np.array(times), values, event, steps)


@dataclass(frozen=True, eq=False)
class YSeries:
    times: RealArray
    y: RealArray
    signs: tuple[int, ...]


def extract_y(traj: PdeTrajectory, cfg: CylinderConfig) -> YSeries:
    """y_k(t) = |f(x_{k+1}, t)| / pi with the signs of the first sample."""
    nodes = [traj.grid.punctures[p] for p in cfg.reduced_punctures]
    first = traj.values[0]
    signs = tuple(int(np.sign(first[i])) for i in nodes)
    y = np.array([[abs(v[i]) / np.pi for i in nodes] for v in traj.values])
    return YSeries(traj.times, y, signs)


# ---------------------------------------------------------------------------
# Reduced system in v-coordinates
# ---------------------------------------------------------------------------


def coupling_matrix(graph: OrientedCycleGraph) -> RealArray:
    """M with dy_k/dt = y_k (M y)_k."""
    n = graph.n
    m = [float(x) for x in graph.masses]
    eps = graph.signs
    out = np.zeros((n, n))
    for k in range(n):
        left, right = graph.neighbours(k)
        out[k, k] -= 1.0 / m[left] + 1.0 / m[right]
        if graph.periodic or k > 0:
            out[k, (k - 1) % n] += eps[k - 1] * eps[k] / m[left]
        if graph.periodic or k < n - 1:
            out[k, (k + 1) % n] += eps[k] * eps[(k + 1) % n] / m[right]
    return out


@dataclass(frozen=True, eq=False)
class OdeTrajectory:
    s: RealArray
    v: RealArray
    graph: OrientedCycleGraph

    @property
    def t(self) -> RealArray:
        return typing.cast(RealArray, np.exp(self.s))

    @property
    def y(self) -> RealArray:
        return typing.cast(RealArray, np.exp(self.v - self.s[:, None]))

    def slopes(self) -> RealArray:
        """dv/ds at every sample."""
        m = coupling_matrix(self.graph)
        return typing.cast(RealArray, 1.0 + np.exp(self.v) @ m.T)


def integrate_ode(
    graph: OrientedCycleGraph,
    y0: typing.Sequence[float],
    t_end: float,
    t0: float = 1.0,
    *,
    t_eval: typing.Sequence[float] | None = None,
) -> OdeTrajectory:
    """dv/ds = 1 + M e^v with v = log(t y), s = log t."""
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (graph.n,) or np.any(y0 <= 0):
        raise DomainError("initial heights must be positive, one per puncture")
    if t0 <= 0 or t_end <= t0:
        raise DomainError("need 0 < t0 < t_end")
    m = coupling_matrix(graph)

    def rhs(s: float, v: RealArray) -> RealArray:
        return typing.cast(RealArray, 1.0 + m @ np.exp(v))

    def jac(s: float, v: RealArray) -> RealArray:
        return typing.cast(RealArray, m * np.exp(v)[None, :])

    def blow_up(s: float, v: RealArray) -> float:
        return float(np.max(v)) - BLOW_UP

    blow_up.terminal = True  # type: ignore[attr-defined]
    span = (math.log(t0), math.log(t_end))
    # np.log and math.log may disagree in the last bit at the span ends
    s_eval = None if t_eval is None else np.clip(np.log(np.asarray(t_eval, dtype=float)), *span)
    sol = integrate.solve_ivp(
        rhs,
        span,
        np.log(t0 * y0),
        method="Radau",
        jac=jac,
        t_eval=s_eval,
        events=blow_up,
        rtol=1e-10,
        atol=1e-12,
    )
    if sol.status == 1:
        raise BlowUpError(float(sol.t_events[0][0]), sol.y_events[0][0].tolist())
    if not sol.success:
        raise IntegrationError(f"v-system integration failed: {sol.message}")
    return OdeTrajectory(sol.t, sol.y.T, graph)


def chamber_rates(graph: OrientedCycleGraph) -> RealArray:
    """Predicted limits of dv_k/ds: 1 - gap of the arrow at puncture k.

    "Convergence" of the v-coordinates is read as convergence of these
    rates: v_k itself settles only on tight arrows, where the rate is 0, and
    drifts linearly everywhere else.
    """
    grading = weight_grading(graph.digraph())
    return np.array([1.0 - float(grading.gaps[graph.arrow(k)]) for k in range(graph.n)])


@dataclass(frozen=True, eq=False)
class FixedPoint:
    v: RealArray
    tight: tuple[int, ...]
    residual: float


def fixed_point(graph: OrientedCycleGraph) -> FixedPoint:
    """Limit of v on tight arrows; other coordinates tend to -inf."""
    rates = chamber_rates(graph)
    tight = tuple(int(k) for k in np.flatnonzero(np.abs(rates) < 1e-9))
    m = coupling_matrix(graph)
    sub = m[np.ix_(tight, tight)]
    x, *_ = np.linalg.lstsq(sub, -np.ones(len(tight)), rcond=None)
    if np.any(x <= 0):
        raise ConsistencyError(f"tight subsystem has no positive fixed point ({x})")
    v = np.full(graph.n, -np.inf)
    v[list(tight)] = np.log(x)
    residual = float(np.max(np.abs(1.0 + sub @ x), initial=0.0))
    return FixedPoint(v, tight, residual)


@dataclass(frozen=True)
class DriftReport:
    rates: tuple[float, ...]
    constants: tuple[float, ...]
    log_coefficients: tuple[float, ...]
    window: tuple[float, float]
    drifting: tuple[int, ...] = field(default=())


def wall_asymptotics(
    graph: OrientedCycleGraph,
    y0: typing.Sequence[float],
    *,
    window: tuple[float, float] = (15.0, 25.0),
    threshold: float = 0.1,
) -> DriftReport:
    """Fit v_k(s) - rate_k s against (1, log s) on ``window``.

    A nonzero ``log s`` coefficient is a ``log log t`` term in the original
    time; those above ``threshold`` are reported as drifting.
    """
    rates = chamber_rates(graph)
    s = np.linspace(window[0], window[1], 201)
    traj = integrate_ode(graph, y0, math.exp(window[1]), t_eval=np.exp(s))
    design = np.column_stack([np.ones_like(s), np.log(s)])
    coeffs, *_ = np.linalg.lstsq(design, traj.v - np.outer(s, rates), rcond=None)
    drifting = tuple(int(k) for k in np.flatnonzero(np.abs(coeffs[1]) > threshold))
    return DriftReport(
        tuple(rates.tolist()),
        tuple(coeffs[0].tolist()),
        tuple(coeffs[1].tolist()),
        window,
        drifting,
    )


# ---------------------------------------------------------------------------
# Ansatz
# ---------------------------------------------------------------------------


def phi(x: RealArray) -> RealArray:
    """The solution of (x^2 + 1) phi'' = 1 with phi(0) = phi'(0) = 0."""
    x = np.asarray(x, dtype=float)
    return typing.cast(RealArray, x * np.arctan(x) - 0.5 * np.log1p(x * x))


#: Limit of phi(x) - pi |x| / 2 + log |x|.
PHI_CONSTANT = -1.0


@dataclass(frozen=True, eq=False)
class Ansatz:
    """phi and the segment functions chi, psi of one segment.

    chi solves rho(x, 0) chi'' = x - a on ``[a, b]`` with chi(a) = 0 and
    chi(x) + m log(b - x) -> 0 at b; psi is its mirror image.
    """

    segment: int
    start: float
    end: float
    chi: typing.Callable[[RealArray], RealArray]
    psi: typing.Callable[[RealArray], RealArray]
    phi: typing.Callable[[RealArray], RealArray] = phi


def _segment_solution(
    cfg: CylinderConfig, a: float, b: float, source: typing.Callable[[float], float]
) -> typing.Callable[[RealArray], RealArray]:
    mid = 0.5 * (a + b)
    delta = 1e-6 * (b - a)

    def rhs(x: float, state: RealArray) -> list[float]:
        rho = float(cfg.density(np.array(x % cfg.length), np.array(0.0)))
        return [state[1], source(x) / rho]

    runs = []
    for stop in (a + delta, b - delta):
        sol = integrate.solve_ivp(rhs, (mid, stop), [0.0, 0.0], method="DOP853", rtol=1e-10, atol=1e-12, dense_output=True)
        if not sol.success:
            raise IntegrationError(f"segment ODE failed: {sol.message}")
        runs.append(sol)

    def particular(x: RealArray) -> RealArray:
        x = np.clip(np.asarray(x, dtype=float), a + delta, b - delta)
        left = runs[0].sol(np.minimum(x, mid))[0]
        right = runs[1].sol(np.maximum(x, mid))[0]
        return typing.cast(RealArray, np.where(x < mid, left, right))

    return particular


def ansatz_functions(i: int, cfg: CylinderConfig) -> Ansatz:
    """phi, chi_i and psi_i for segment ``i`` = [x_i, x_{i+1}]."""
    if not cfg.punctures or cfg.rho != "quadratic":
        raise DomainError("the ansatz needs punctures with a quadratic density")
    masses = cfg.masses
    if not 0 <= i < len(masses):
        raise DomainError(f"no segment {i}")
    a = cfg.punctures[i]
    b = a + masses[i]
    m = masses[i]
    delta = 1e-6 * m
    p_chi = _segment_solution(cfg, a, b, lambda x: x - a)
    p_psi = _segment_solution(cfg, a, b, lambda x: b - x)

    def normalized(
        particular: typing.Callable[[RealArray], RealArray], regular_at: float, singular_at: float
    ) -> typing.Callable[[RealArray], RealArray]:
        # Affine correction c0 + c1 (x - a): zero at the regular end, and the
        # log singularity absorbs the value at the singular end.
        rx = regular_at + (delta if regular_at == a else -delta)
        sx = singular_at + (delta if singular_at == a else -delta)
        system = np.array([[1.0, rx - a], [1.0, sx - a]])
        target = np.array(
            [-float(particular(np.array(rx))), -float(particular(np.array(sx))) - m * math.log(delta)]
        )
        c0, c1 = np.linalg.solve(system, target)

        def fn(x: RealArray) -> RealArray:
            return typing.cast(RealArray, particular(x) + c0 + c1 * (np.asarray(x, dtype=float) - a))

        return fn

    return Ansatz(i, a, b, normalized(p_chi, a, b), normalized(p_psi, b, a))


@dataclass(frozen=True, eq=False)
class AnsatzCoeffs:
    """Fitted coefficients at one time.

    ``a[k]`` belongs to reduced variable ``k`` (puncture ``x_{k+1}``) and
    ``b[j]`` to segment ``j``. ``matching`` holds the six matching residuals
    per reduced variable, relative to ``|a_{k,0}|``.
    """

    t: float
    a: RealArray
    b: RealArray
    matching: RealArray
    fit_residual: float


@dataclass(frozen=True, eq=False)
class AnsatzReport:
    fits: list[AnsatzCoeffs]
    #: max |da_0/dt - a_2| / |a_2| over interior samples
    dynamic: float
    #: max relative gap between pi a_0'/|a_0| and the reduced right-hand side
    reduced: float


def _fit_puncture(x: RealArray, f: RealArray, center: float) -> tuple[RealArray, float]:
    a0 = float(f[np.argmin(np.abs(x - center))])
    for _ in range(20):
        design = np.column_stack([np.ones_like(x), x - center, phi((x - center) / a0)])
        coeffs, *_ = np.linalg.lstsq(design, f, rcond=None)
        converged = abs(coeffs[0] - a0) <= 1e-13 * max(1.0, abs(a0))
        a0 = float(coeffs[0])
        if converged:
            break
    design = np.column_stack([np.ones_like(x), x - center, phi((x - center) / a0)])
    coeffs, *_ = np.linalg.lstsq(design, f, rcond=None)
    return coeffs, float(np.max(np.abs(design @ coeffs - f)))


def _fit_segment(x: RealArray, f: RealArray, ansatz: Ansatz) -> tuple[RealArray, float]:
    design = np.column_stack([x - ansatz.start, ansatz.end - x, ansatz.chi(x), ansatz.psi(x)])
    coeffs, *_ = np.linalg.lstsq(design, f, rcond=None)
    return coeffs, float(np.max(np.abs(design @ coeffs - f)))


def fit_ansatz(
    traj: PdeTrajectory,
    cfg: CylinderConfig,
    *,
    samples: typing.Sequence[int] | None = None,
    window: float = 0.05,
    threshold: float = 0.05,
) -> AnsatzReport:
    """Fit the near-puncture and segment forms and check the matching table.

    ``window`` is the half-width of the near-puncture fit relative to the
    smaller adjacent segment; segment fits use the nodes outside it.
    """
    if not cfg.periodic:
        raise DomainError("ansatz fitting is implemented for the periodic cylinder")
    masses = cfg.masses
    n = cfg.n
    ansatz = [ansatz_functions(j, cfg) for j in range(n)]
    x_nodes = traj.grid.nodes
    chosen = list(range(len(traj.times))) if samples is None else list(samples)
    fits = []
    for idx in chosen:
        f = traj.values[idx]
        a = np.zeros((n, 3))
        b = np.zeros((n, 4))
        worst = 0.0
        for k, p in enumerate(cfg.reduced_punctures):
            center = cfg.punctures[p]
            left, right = k, (k + 1) % n
            width = window * min(masses[left], masses[right])
            dist = cfg.distance(x_nodes, center)
            mask = dist <= width
            offset = ((x_nodes[mask] - center + 0.5 * cfg.length) % cfg.length) - 0.5 * cfg.length
            coeffs, err = _fit_puncture(center + offset, f[mask], center)
            a[k] = coeffs
            worst = max(worst, err)
        for j in range(n):
            start, end = ansatz[j].start, ansatz[j].end
            rel = (x_nodes - start) % cfg.length
            margin = window * masses[j]
            mask = (rel >= margin) & (rel <= masses[j] - margin)
            coeffs, err = _fit_segment(start + rel[mask], f[mask], ansatz[j])
            b[j] = coeffs
            worst = max(worst, err)
        matching = np.zeros((n, 6))
        for k in range(n):
            left, right = k, (k + 1) % n
            a0, a1, a2 = a[k]
            scale = max(abs(a0), 1e-300)
            jump = np.pi * a2 / (2 * abs(a0))
            matching[k] = [
                masses[left] * b[left, 0] - a0,
                masses[right] * b[right, 1] - a0,
                b[left, 0] - b[left, 1] - (a1 - jump),
                b[right, 0] - b[right, 1] - (a1 + jump),
                masses[left] * b[left, 2] - a2,
                masses[right] * b[right, 3] - a2,
            ]
            matching[k] /= scale
        fits.append(AnsatzCoeffs(float(traj.times[idx]), a, b, matching, worst))
        if worst > threshold * float(np.max(np.abs(a[:, 0]))):
            logger.warning("ansatz fit at t=%g has residual %.3e; regime not reached", traj.times[idx], worst)

    dynamic = 0.0
    reduced = 0.0
    if len(fits) >= 3:
        graph = cfg.cycle_graph([int(np.sign(a0)) for a0 in fits[0].a[:, 0]])
        m = coupling_matrix(graph)
        for prev, cur, nxt in zip(fits, fits[1:], fits[2:]):
            da0 = (nxt.a[:, 0] - prev.a[:, 0]) / (nxt.t - prev.t)
            a2 = cur.a[:, 2]
            dynamic = max(dynamic, float(np.max(np.abs(da0 - a2) / np.maximum(np.abs(a2), 1e-300))))
            y = np.abs(cur.a[:, 0]) / np.pi
            predicted = m @ y
            measured = np.sign(cur.a[:, 0]) * da0 / np.abs(cur.a[:, 0])
            reduced = max(
                reduced,
                float(np.max(np.abs(measured - predicted) / np.maximum(np.abs(predicted), 1e-300))),
            )
    return AnsatzReport(fits, dynamic, reduced)


# ---------------------------------------------------------------------------
# PDE against ODE
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CompareReport:
    handoff: float
    times: RealArray
    pde: RealArray
    ode: RealArray
    sup: tuple[float, ...]
    drift: tuple[float, ...]
    bounded: bool


def compare_pde_ode(
    cfg: CylinderConfig,
    f0: CurveState,
    t_end: float,
    *,
    handoff_level: float = 0.1,
    samples: int = 80,
    max_drift: float = 0.1,
    max_step: float = math.inf,
) -> CompareReport:
    """Run the PDE, hand its heights to the reduced system once all y < 0.1,
    and measure |log y_pde - log y_ode| afterwards."""
    if cfg.n < 2 or cfg.rho != "quadratic":
        raise DomainError("comparison needs at least two punctures with a quadratic density")
    pde = integrate_pde(
        cfg, f0, t_end, t_eval=np.geomspace(min(1e-3, t_end / 10), t_end, samples), max_step=max_step
    )
    if pde.event is not None:
        raise IntegrationError(f"curve crossed puncture {pde.event.puncture} at t={pde.event.t:g}")
    series = extract_y(pde, cfg)
    below = np.flatnonzero(np.all(series.y < handoff_level, axis=1) & (series.times > 0))
    if not below.size:
        raise ConsistencyError(f"heights never dropped below {handoff_level} before t={t_end}")
    start = int(below[0])
    if start == len(series.times) - 1:
        raise ConsistencyError(f"heights dropped below {handoff_level} only at the final sample")
    t0 = float(series.times[start])
    later = series.times[start:]
    graph = cfg.cycle_graph(series.signs)
    ode = integrate_ode(graph, series.y[start], float(later[-1]), t0, t_eval=later)
    gap = np.abs(np.log(series.y[start:]) - np.log(ode.y))
    sup = gap.max(axis=0)
    last = later >= later[-1] / 10.0
    drift = []
    for k in range(gap.shape[1]):
        if last.sum() >= 2:
            slope = float(np.polyfit(np.log10(later[last]), gap[last, k], 1)[0])
        else:
            slope = 0.0
        drift.append(abs(slope))
    bounded = max(drift) < max_drift
    logger.debug("handoff at t=%g; sup log gap %s", t0, sup)
    return CompareReport(t0, later, series.y[start:], ode.y, tuple(sup.tolist()), tuple(drift), bounded)
