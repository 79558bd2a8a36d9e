"""
Benchmark problems, weighting factors, error norms and experiment drivers
"""

import logging
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from assembly import flux_jumps, primal_jumps
from mesh import BoundaryLabel, DomainSpec, Mesh
from quadrature import edge_rule, load_degree, triangle_rule
from spaces import DiscreteSolution

logger = logging.getLogger(__name__)

# smallest Dirichlet eigenvalue of the Laplacian on the L-shape (-1, 1)^2 minus [0, 1)^2
LSHAPE_EIGENVALUE = 9.6397238389738806

CSV_COLUMNS = ("level", "ndof", "ntriangles", "estimator", "err_energy_rel", "err_weighted",
               "efficiency", "unreliable", "k", "alpha", "ell", "theta", "weight_mode", "c_omega")

Field = Callable[[np.ndarray], np.ndarray]


class WeightMode(str, Enum):
    """Choices of the weight c_Omega in front of the divergence residual."""
    ONE = "one"
    DIAMETER = "diameter"
    WIDTH = "width"
    FRIEDRICHS = "friedrichs"
    ELL_OVER_PI = "ell_over_pi"


WEIGHT_MODES = tuple(mode.value for mode in WeightMode)


@dataclass(frozen=True)
class ExactSolution:
    """
    Exact solution of -Delta u = f with homogeneous boundary data.

    All callables take points of shape (..., 2); u and f return (...),
    grad returns (..., 2).
    """
    domain: DomainSpec
    u: Field
    grad: Field
    f: Field


def _square(ell: float) -> Tuple[Field, Field, Field]:
    a = np.pi / ell

    def u(x):
        return np.sin(a * x[..., 0]) * np.sin(a * x[..., 1])

    def grad(x):
        sx, sy = np.sin(a * x[..., 0]), np.sin(a * x[..., 1])
        cx, cy = np.cos(a * x[..., 0]), np.cos(a * x[..., 1])
        return a * np.stack((cx * sy, sx * cy), axis=-1)

    def f(x):
        return 2.0 * a ** 2 * u(x)

    return u, grad, f


def _rectangle(ell: float) -> Tuple[Field, Field, Field]:
    a = np.pi / ell

    def u(x):
        return np.sin(a * x[..., 0])

    def grad(x):
        return np.stack((a * np.cos(a * x[..., 0]), np.zeros(x.shape[:-1])), axis=-1)

    def f(x):
        return a ** 2 * u(x)

    return u, grad, f


def _lshape(ell: float) -> Tuple[Field, Field, Field]:
    """
    u = rho^(2/3) sin(2 phi / 3) (1 - X^2)(1 - Y^2) with X = x1/ell, Y = x2/ell,
    rho = r/ell and phi counted counter-clockwise from the positive x2-axis.
    The singular factor s is harmonic, so Delta u = s Delta b + 2 grad s . grad b.
    """

    def polar(x):
        theta = np.arctan2(x[..., 1], x[..., 0])
        rho = np.hypot(x[..., 0], x[..., 1]) / ell
        phi = np.mod(theta - 0.5 * np.pi, 2.0 * np.pi)
        return theta, rho, phi

    def bubble(x):
        X, Y = x[..., 0] / ell, x[..., 1] / ell
        b = (1.0 - X ** 2) * (1.0 - Y ** 2)
        grad_b = np.stack((-2.0 * X / ell * (1.0 - Y ** 2), -2.0 * Y / ell * (1.0 - X ** 2)), axis=-1)
        lap_b = -2.0 / ell ** 2 * ((1.0 - Y ** 2) + (1.0 - X ** 2))
        return b, grad_b, lap_b

    def singular(x):
        theta, rho, phi = polar(x)
        s = rho ** (2.0 / 3.0) * np.sin(2.0 * phi / 3.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = 2.0 / (3.0 * ell) * rho ** (-1.0 / 3.0)
        radial = scale * np.sin(2.0 * phi / 3.0)
        angular = scale * np.cos(2.0 * phi / 3.0)
        grad_s = np.stack((radial * np.cos(theta) - angular * np.sin(theta),
                           radial * np.sin(theta) + angular * np.cos(theta)), axis=-1)
        return s, grad_s

    def u(x):
        s, _ = singular(x)
        return s * bubble(x)[0]

    def grad(x):
        s, grad_s = singular(x)
        b, grad_b, _ = bubble(x)
        return b[..., None] * grad_s + s[..., None] * grad_b

    def f(x):
        s, grad_s = singular(x)
        _, grad_b, lap_b = bubble(x)
        return -(s * lap_b + 2.0 * np.einsum("...d,...d->...", grad_s, grad_b))

    return u, grad, f


def exact_solution(domain: Union[str, DomainSpec], ell: float = 1.0) -> ExactSolution:
    """
    Benchmark solution of a domain.

    square(l):    u = sin(pi x1/l) sin(pi x2/l),  f = 2 pi^2/l^2 u
    rectangle(l): u = sin(pi x1/l),               f = pi^2/l^2 u
    lshape(l):    corner singularity r^(2/3) sin(2 phi/3) times a bubble
    """
    if isinstance(domain, str):
        domain = DomainSpec(domain, ell)
    builders = {"square": _square, "rectangle": _rectangle, "lshape": _lshape}
    u, grad, f = builders[domain.name](float(domain.ell))
    return ExactSolution(domain=domain, u=u, grad=grad, f=f)


def weight(mode: Union[str, WeightMode], domain: Union[str, DomainSpec], ell: float = 1.0) -> float:
    """
    Weight c_Omega of a domain.

    Args:
        mode: one of WEIGHT_MODES
        domain: domain name or DomainSpec (ell is then taken from it)
        ell: length scale

    Returns:
        Positive weight c_Omega
    """
    if isinstance(domain, DomainSpec):
        name, ell = domain.name, float(domain.ell)
    else:
        name = DomainSpec(domain, ell).name
    mode = WeightMode(mode)
    if mode is WeightMode.ONE:
        return 1.0
    if mode is WeightMode.ELL_OVER_PI:
        return ell / np.pi
    table = {
        WeightMode.DIAMETER: {"square": np.sqrt(2.0) * ell, "rectangle": np.hypot(ell, 1.0),
                              "lshape": 2.0 * np.sqrt(2.0) * ell},
        WeightMode.WIDTH: {"square": ell, "rectangle": min(ell, 1.0), "lshape": 2.0 * ell},
        WeightMode.FRIEDRICHS: {"square": ell / np.pi, "rectangle": ell / np.pi,
                                "lshape": ell / np.sqrt(LSHAPE_EIGENVALUE)},
    }
    return float(table[mode][name])


@dataclass(frozen=True)
class ErrorReport:
    """
    Errors of a discrete solution against the exact one.

    err_weighted^2 = c^2 ||div(sigma - sigma_h)||^2 + ||sigma - sigma_h||^2
                     + ||grad_pw(u - u_h)||^2 + j^2(u_h)
    """
    err_energy_rel: float
    err_weighted: float
    sigma_rel: float
    div_rel: float
    flux_jump_op: float

    def __iter__(self):
        return iter((self.err_energy_rel, self.err_weighted))


def compute_errors(mesh: Mesh, solution: DiscreteSolution, exact: ExactSolution, c_omega: float) -> ErrorReport:
    """
    Relative energy error and weighted error of (sigma_h, u_h).

    sigma = grad u and div sigma = -f enter the weighted norm. Unpacking the
    report yields (err_energy_rel, err_weighted); the relative flux errors
    and the over-penalized normal-jump term c^2 sum h_E^{-1} ||[sigma_h . n_E]||^2
    are extra diagnostics.
    """
    rt_space, dg_space = solution.rt_space, solution.dg_space
    rule = triangle_rule(load_degree(rt_space.k))
    bary = rule.barycentric
    weights = 2.0 * mesh.areas[:, None] * rule.weights[None, :]
    x = mesh.to_physical(bary)

    sig_h, div_h = rt_space.field(solution.sigma, bary)
    _, grad_uh = dg_space.field(solution.u, bary)
    grad_u = exact.grad(x)
    fx = exact.f(x)

    def norm_sq(values):
        if values.ndim == 3:
            values = np.einsum("cqd,cqd->cq", values, values)
        else:
            values = values ** 2
        return float(np.sum(weights * values))

    grad_norm = norm_sq(grad_u)
    energy = norm_sq(grad_u - grad_uh)
    flux = norm_sq(grad_u - sig_h)
    div = norm_sq(fx + div_h)

    topo = mesh.edges
    erule = edge_rule(2 * rt_space.k + 4)
    edges = topo.primal_jump_edges
    jump_sq = 0.0
    if edges.size:
        jump = primal_jumps(dg_space, solution.u, edges, erule.points)
        jump_sq = float(np.einsum("q,eq->", erule.weights, jump ** 2))
    edges = topo.flux_jump_edges
    flux_jump_op = 0.0
    if edges.size:
        jump = flux_jumps(rt_space, solution.sigma, edges, erule.points)
        flux_jump_op = c_omega ** 2 * float(np.einsum("q,eq->", erule.weights, jump ** 2))

    weighted = np.sqrt(c_omega ** 2 * div + flux + energy + jump_sq)
    f_norm = norm_sq(fx)
    report = ErrorReport(
        err_energy_rel=float(np.sqrt(energy / grad_norm)) if grad_norm > 0 else float(np.sqrt(energy)),
        err_weighted=float(weighted),
        sigma_rel=float(np.sqrt(flux / grad_norm)) if grad_norm > 0 else float(np.sqrt(flux)),
        div_rel=float(np.sqrt(div / f_norm)) if f_norm > 0 else float(np.sqrt(div)),
        flux_jump_op=flux_jump_op,
    )
    logger.debug("relative flux errors: sigma %.3e, div %.3e", report.sigma_rel, report.div_rel)
    return report


def side_condition_diagnostic(mesh: Mesh) -> Tuple[float, float]:
    """
    Growth of the mean normal-jump functional tested with a conforming P1 function.

    w_h is the continuous piecewise affine function with value 1 at interior
    and Neumann vertices and 0 at Dirichlet vertices.

    Returns:
        lhs = sum_E int_E w_h ds / ||grad w_h|| and rhs = (sum_E h_E^2)^(1/2),
        both summed over interior and Neumann edges
    """
    w = (mesh.vertex_labels != BoundaryLabel.DIRICHLET).astype(float)
    grad = np.einsum("mi,mid->md", w[mesh.triangles], mesh.barycentric_gradients)
    grad_norm = np.sqrt(np.sum(mesh.areas * np.sum(grad ** 2, axis=1)))
    if grad_norm == 0:
        raise ValueError("w_h is constant, the mesh needs Dirichlet and non-Dirichlet vertices")

    topo = mesh.edges
    edges = topo.flux_jump_edges
    h = topo.length[edges]
    means = 0.5 * (w[topo.vertices[edges, 0]] + w[topo.vertices[edges, 1]])
    lhs = float(np.sum(h * means) / grad_norm)
    rhs = float(np.sqrt(np.sum(h ** 2)))
    return lhs, rhs


@dataclass(frozen=True)
class ConvergenceRecord:
    """One refinement level of an experiment, one CSV row."""
    level: int
    ndof: int
    ntriangles: int
    estimator: float
    err_energy_rel: float
    err_weighted: float
    efficiency: float
    unreliable: int
    k: int
    alpha: int
    ell: float
    theta: float
    weight_mode: str
    c_omega: float


def efficiency_index(estimator: float, err_weighted: float) -> float:
    return estimator / err_weighted if err_weighted > 0 else float("nan")


def history_frame(records: Sequence[ConvergenceRecord]) -> pd.DataFrame:
    """Records as a DataFrame with the CSV column order."""
    return pd.DataFrame([asdict(r) for r in records], columns=list(CSV_COLUMNS))


def write_history_csv(records: Sequence[ConvergenceRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    history_frame(records).to_csv(path, index=False, encoding="utf-8")
    logger.info("wrote %d levels to %s", len(records), path)
    return path


def rate_fit(ndof: Sequence[float], values: Sequence[float], window: int = 3,
             reliable: Optional[Sequence[bool]] = None) -> float:
    """
    Least-squares slope of log(values) against log(ndof) over the last
    `window` reliable levels with positive values.

    Returns:
        The fitted slope, NaN with fewer than two usable levels
    """
    ndof = np.asarray(ndof, dtype=float)
    values = np.asarray(values, dtype=float)
    usable = np.isfinite(values) & (values > 0) & (ndof > 0)
    if reliable is not None:
        usable &= np.asarray(reliable, dtype=bool)
    ndof, values = ndof[usable][-window:], values[usable][-window:]
    if ndof.size < 2:
        logger.warning("rate fit needs two usable levels, got %d", ndof.size)
        return float("nan")
    slope, _ = np.polyfit(np.log(ndof), np.log(values), 1)
    return float(slope)


def history_rates(records: Sequence[ConvergenceRecord], window: int = 3) -> dict:
    """Fitted slopes of the estimator and both errors over the reliable levels."""
    frame = history_frame(records)
    reliable = frame["unreliable"].to_numpy() == 0
    return {column: rate_fit(frame["ndof"], frame[column], window, reliable)
            for column in ("estimator", "err_energy_rel", "err_weighted")}


def run_experiment(config, output: Optional[Union[str, Path]] = None):
    """
    Run the adaptive loop of a configuration and write its history.

    Args:
        config: ExperimentConfig
        output: CSV path; nothing is written when None

    Returns:
        (AdaptiveHistory, CSV path or None)

    Raises:
        OSError: when the CSV cannot be written
    """
    # adaptivity builds on this module
    from adaptivity import afem_loop

    history = afem_loop(config)
    path = write_history_csv(history.records, output) if output is not None else None
    return history, path


def default_output_name(config) -> str:
    """File name encoding the experiment parameters."""
    alpha = "p" if config.alpha > 0 else "m"
    return (f"{config.domain}_ell{config.ell:g}_k{config.k}_alpha{alpha}_"
            f"{config.weight}_theta{config.theta:g}.csv")
