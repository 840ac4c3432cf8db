"""Fixed-point solvers for the four radiative regimes.

All temperature solvers iterate monotone maps from zero initial data, so
residuals decay monotonically; a violated decay aborts the run.  Convergence
norms follow the contraction proofs: sup-over-position of the angular L1
change for the scattering sweep, and the volume L1 norm for the temperature
maps.

The combined regime is organized as a nested iteration: the outer loop
updates the emission field w = f(T); each outer step solves the linear
transport problem at frozen temperature.  For isotropic scattering that
linear problem closes in the angle-integrated radiance and is solved with
the lattice kernel; for tabulated kernels an angular source-iteration sweep
is used instead.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from radbody import geometry, spectral, transport
from radbody.geometry import ConvexDomain
from radbody.quadrature import AngularGrid, SpatialGrid, SpectralGrid, scaled_spatial
from radbody.spectral import AbsorptionProfile
from radbody.transport import (
    FOUR_PI,
    BoundarySource,
    MediumSpec,
    RadiationField,
    RaySweeper,
    ScalarField,
    attenuation_operator,
    boundary_attenuation_nodes,
    scattered_mean_intensity,
)


class MaxIterExceeded(RuntimeError):
    """A solver hit its iteration cap without reaching tolerance."""


class InnerDiverged(RuntimeError):
    """The inner linear-transport solve of the combined regime stalled."""


class CapExceeded(RuntimeError):
    """A spectral iterate escaped its a-priori bound; kernel mass is suspect."""


class NegativeSource(RuntimeError):
    """The boundary sink term came out negative; quadrature failure."""


class TooLarge(ValueError):
    """Problem size exceeds the brute-force oracle budget."""


class MonotonicityError(RuntimeError):
    """Residuals increased for a map that must contract monotonically."""


@dataclass(frozen=True)
class Grids:
    """Resolution bundle shared by the solvers."""

    spatial: SpatialGrid
    angular: AngularGrid
    spectral: SpectralGrid
    ray_h: float | None = None


@dataclass
class SolverReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    contraction_estimates: list = field(default_factory=list)
    conservation_norm: float = 0.0
    wall_time: float = 0.0
    status: str = "converged"
    tolerance: float = 0.0
    norm: str = ""
    truncation_terms: int | None = None
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual_history": [float(r) for r in self.residual_history],
            "contraction_estimates": [float(r) for r in self.contraction_estimates],
            "conservation_norm": float(self.conservation_norm),
            "wall_time": float(self.wall_time),
            "status": self.status,
            "tolerance": float(self.tolerance),
            "norm": self.norm,
            "truncation_terms": self.truncation_terms,
            "extra": self.extra,
        }


def _push_residual(report: SolverReport, value: float, scale: float):
    """Record a residual and fail the run on non-monotone decay.

    Rounding-level wobble near the floor is tolerated; any genuine increase
    of a contracting iteration indicates a broken operator.
    """
    hist = report.residual_history
    if hist:
        prev = hist[-1]
        floor = 1e3 * np.finfo(float).eps * max(scale, 1e-300)
        if prev > floor and value > prev * 1.0001 + floor:
            report.status = "invariant_violation"
            raise MonotonicityError(
                f"residual increased: {prev:.3e} -> {value:.3e} at iteration {len(hist)}"
            )
        if prev > 0.0:
            report.contraction_estimates.append(value / prev)
    hist.append(value)


def _finish(report: SolverReport, converged: bool, t0: float):
    report.wall_time = time.perf_counter() - t0
    report.iterations = len(report.residual_history)
    report.status = "converged" if converged else "max_iter"


# ---------------------------------------------------------------------------
# Pure scattering
# ---------------------------------------------------------------------------


def solve_scattering(
    domain: ConvexDomain,
    medium: MediumSpec,
    g: BoundarySource,
    grids: Grids,
    tol: float = 1e-8,
    max_iter: int = 500,
):
    """Source iteration for the scattering-only transfer equation.

    Sweeps the integral map I <- boundary + ray integral of the in-scattered
    field for every (node, direction, frequency); converges in the
    sup-position, L1-direction norm with the optical-depth contraction.
    """
    t0 = time.perf_counter()
    if not medium.absorption.is_zero():
        raise ValueError("solve_scattering requires a zero absorption profile")
    grid, angular, sgrid = grids.spatial, grids.angular, grids.spectral
    beta = medium.scattering(sgrid.nodes)
    if np.any(beta <= 0.0):
        raise ValueError("scattering coefficient must be positive on the grid")
    K, _ = medium.kernel_matrix(angular)
    sweeper = RaySweeper(domain, grid, angular, grids.ray_h)
    A, J, M = angular.n_nodes, sgrid.n_nodes, grid.n_nodes
    gvals = g.evaluate(angular.nodes, sgrid.nodes)  # (A, J)

    # Precompute per-angle boundary terms and path lengths.
    s_all = np.empty((A, M))
    for i in range(A):
        s_all[i] = geometry.exit_lengths(domain, grid.centers, angular.nodes[i])
    bterm = np.exp(-s_all[:, :, None] * beta) * gvals[:, None, :]  # (A, M, J)

    I = np.transpose(bterm, (1, 0, 2)).copy()  # start from the boundary-only term
    Kw = K * angular.weights[None, :]  # K[i, i'] w_i'
    report = SolverReport(tolerance=tol, norm="sup_x L1_n (per frequency)")
    converged = False
    for _ in range(max_iter):
        Phi = np.einsum("ik,mkj->mij", Kw, I)
        I_new = np.empty_like(I)
        for i in range(A):
            box = grid.embed(Phi[:, i, :])
            contrib, _ = sweeper.line_integrals(i, box, beta)
            I_new[:, i, :] = bterm[i] + contrib * beta
        change = float(np.max(np.einsum("i,mij->mj", angular.weights, np.abs(I_new - I))))
        I = I_new
        _push_residual(report, change, float(np.max(np.abs(I))) + 1e-300)
        if change <= tol:
            converged = True
            break
    _finish(report, converged, t0)
    report.conservation_norm = report.residual_history[-1] if report.residual_history else 0.0
    return RadiationField(I), report


# ---------------------------------------------------------------------------
# Grey absorption
# ---------------------------------------------------------------------------


def solve_grey(
    domain: ConvexDomain,
    alpha: float,
    g: BoundarySource,
    grids: Grids,
    tol: float = 1e-8,
    max_iter: int = 500,
):
    """Picard iteration for the grey (constant absorption) regime.

    Coordinates are pre-scaled by alpha so the internal map uses the
    unit-rate kernel; the returned fields live on the original nodes.
    Returns (a = sigma T^4, T, report).
    """
    t0 = time.perf_counter()
    alpha = float(alpha)
    if alpha <= 0.0:
        raise ValueError("grey absorption coefficient must be positive")
    grid, angular, sgrid = grids.spatial, grids.angular, grids.spectral
    if alpha == 1.0:
        sdomain, sgrid_sp = domain, grid
    else:
        sdomain = ConvexDomain(domain.shape, domain.center * alpha, domain.semi_axes * alpha)
        sgrid_sp = scaled_spatial(grid, alpha)
    op = attenuation_operator(sgrid_sp, 1.0)
    mass = op.row_mass()
    rates = np.ones(sgrid.n_nodes)
    b_freq = boundary_attenuation_nodes(
        sdomain, sgrid_sp, g, rates, angular, sgrid,
        mass_fields=[mass] * sgrid.n_nodes if g.is_isotropic else None,
    )
    b = b_freq @ sgrid.weights
    if np.any(b < 0.0):
        raise NegativeSource("boundary sink term is negative at some node")

    a = np.zeros(grid.n_nodes)
    report = SolverReport(tolerance=tol, norm="L1(Omega), relative")
    converged = False
    for _ in range(max_iter):
        a_new = op.apply(a) + b
        change = float(np.sum(np.abs(a_new - a))) * grid.cell_volume
        scale = float(np.sum(np.abs(a_new))) * grid.cell_volume
        a = a_new
        _push_residual(report, change, scale + 1e-300)
        if change <= tol * max(scale, 1e-300):
            converged = True
            break
    _finish(report, converged, t0)
    report.conservation_norm = float(np.max(np.abs(FOUR_PI * (a - op.apply(a) - b))))
    T = (a / spectral.stefan_sigma()) ** 0.25
    return ScalarField(a, "sigma_T4"), ScalarField(T, "temperature"), report


# ---------------------------------------------------------------------------
# Frequency-dependent absorption
# ---------------------------------------------------------------------------


def solve_spectral(
    domain: ConvexDomain,
    profile: AbsorptionProfile,
    g: BoundarySource,
    grids: Grids,
    tol: float = 1e-8,
    max_iter: int = 500,
):
    """Picard iteration on w = f(T) for frequency-dependent absorption.

    Iterates w <- kernel term + boundary term from w = 0; iterates stay in
    [0, L] where L is derived from the measured maximal kernel row mass.
    Returns (w, T, report).
    """
    t0 = time.perf_counter()
    grid, angular, sgrid = grids.spatial, grids.angular, grids.spectral
    alphas = profile(sgrid.nodes)
    if np.all(alphas == 0.0):
        raise ValueError("absorption profile vanishes on the spectral grid")
    live = alphas > 0.0
    mass_fields = [attenuation_operator(grid, a).row_mass() if a > 0 else np.zeros(grid.n_nodes)
                   for a in alphas]
    b_freq = boundary_attenuation_nodes(
        domain, grid, g, alphas, angular, sgrid,
        mass_fields=mass_fields if g.is_isotropic else None,
    )
    b = (sgrid.weights * alphas) @ b_freq.T
    if np.any(b < 0.0):
        raise NegativeSource("boundary sink term is negative at some node")
    theta = max((float(np.max(mass_fields[j])) for j in np.flatnonzero(live)), default=0.0)
    cap = float(np.max(b)) / max(1.0 - theta, 1e-12) * (1.0 + 1e-6) + 1e-300

    w = np.zeros(grid.n_nodes)
    T = np.zeros(grid.n_nodes)
    report = SolverReport(tolerance=tol, norm="L1(Omega), relative",
                          extra={"kernel_row_mass_max": theta, "iterate_cap": cap})
    converged = False
    for _ in range(max_iter):
        T = spectral.invert_emission_many(profile, w, sgrid, t_guess=T)
        B = spectral.planck(sgrid.nodes, T[:, None])  # (M, J)
        conv = transport.apply_attenuation_batch(grid, alphas, B.T)
        kern = (sgrid.weights * alphas) @ conv
        w_new = kern + b
        if float(np.max(w_new)) > cap:
            report.status = "invariant_violation"
            raise CapExceeded(f"iterate max {np.max(w_new):.3e} exceeded bound {cap:.3e}")
        change = float(np.sum(np.abs(w_new - w))) * grid.cell_volume
        scale = float(np.sum(np.abs(w_new))) * grid.cell_volume
        w = w_new
        _push_residual(report, change, scale + 1e-300)
        if change <= tol * max(scale, 1e-300):
            converged = True
            break
    _finish(report, converged, t0)
    T = spectral.invert_emission_many(profile, w, sgrid, t_guess=T)
    report.conservation_norm = float(report.residual_history[-1]) if report.residual_history else 0.0
    return ScalarField(w, "f_of_T"), ScalarField(T, "temperature"), report


# ---------------------------------------------------------------------------
# Combined scattering + absorption
# ---------------------------------------------------------------------------


def solve_combined(
    domain: ConvexDomain,
    medium: MediumSpec,
    g: BoundarySource,
    grids: Grids,
    tol: float = 1e-8,
    max_iter: int = 500,
    inner_max_iter: int = 800,
    return_radiation: bool = True,
):
    """Nested iteration for scattering plus emission-absorption.

    Returns (w, T, radiation, report); ``radiation`` is None when
    ``return_radiation`` is False (large runs).
    """
    return solve_combined_full(domain, medium, g, grids, tol, max_iter,
                               inner_max_iter, return_radiation)[:4]


def solve_combined_full(
    domain: ConvexDomain,
    medium: MediumSpec,
    g: BoundarySource,
    grids: Grids,
    tol: float = 1e-8,
    max_iter: int = 500,
    inner_max_iter: int = 800,
    return_radiation: bool = True,
):
    """Nested iteration for scattering plus emission-absorption.

    Outer Picard step on w = f(T); each step solves the linear transport
    problem at frozen temperature (warm-started, tolerance tied to the outer
    residual).  Returns (w, T, radiation or None, report, J0) where J0 holds
    the angle-integrated radiance per frequency.
    """
    t0 = time.perf_counter()
    grid, angular, sgrid = grids.spatial, grids.angular, grids.spectral
    alphas_a = medium.absorption(sgrid.nodes)
    alphas_s = medium.scattering(sgrid.nodes)
    if np.all(alphas_a == 0.0):
        raise ValueError(
            "combined solver needs nonzero absorption; the temperature is "
            "indeterminate for pure scattering (use solve_scattering)"
        )
    if not medium.is_isotropic:
        return _solve_combined_angular(domain, medium, g, grids, tol, max_iter,
                                       inner_max_iter, t0)
    beta = alphas_a + alphas_s
    mass_fields = [attenuation_operator(grid, bj).row_mass() if bj > 0 else np.zeros(grid.n_nodes)
                   for bj in beta]
    b_freq = boundary_attenuation_nodes(
        domain, grid, g, beta, angular, sgrid,
        mass_fields=mass_fields if g.is_isotropic else None,
    )
    b4pi = FOUR_PI * b_freq
    if np.any(b4pi < 0.0):
        raise NegativeSource("boundary term is negative at some node")

    M, J = grid.n_nodes, sgrid.n_nodes
    w = np.zeros(M)
    T = np.zeros(M)
    report = SolverReport(tolerance=tol, norm="L1(Omega), relative")
    report.extra["certificate_bound"] = float(np.max(duhamel_theta(alphas_a, alphas_s,
                                                                   geometry.diameter(domain))))
    # Constant coefficients let the inner solve collapse to one frequency-
    # summed field; otherwise iterate the per-frequency system.
    collapsed = medium.absorption.is_constant and medium.scattering.is_constant
    J0 = None if collapsed else np.zeros((M, J))
    U = np.zeros(M)
    converged = False
    inner_tol = 1e-2
    for _ in range(max_iter):
        T = spectral.invert_emission_many(medium.absorption, w, sgrid, t_guess=T)
        if collapsed:
            fT = spectral.emission_integral(medium.absorption, T, sgrid)
            bU = b4pi @ (sgrid.weights * alphas_a)
            U, inner_its = transport.scattered_mean_collapsed(
                grid, sgrid, medium.absorption.value, medium.scattering.value,
                fT, bU, tol=inner_tol, max_iter=inner_max_iter, init=U)
            w_new = U / FOUR_PI
        else:
            B = spectral.planck(sgrid.nodes, T[:, None])
            J0, inner_its = scattered_mean_intensity(
                grid, sgrid, alphas_a, alphas_s, B, b4pi,
                tol=inner_tol, max_iter=inner_max_iter, init=J0,
            )
            w_new = (sgrid.weights * alphas_a) @ J0.T / FOUR_PI
        if inner_its >= inner_max_iter:
            raise InnerDiverged("inner transport solve hit its iteration cap")
        change = float(np.sum(np.abs(w_new - w))) * grid.cell_volume
        scale = float(np.sum(np.abs(w_new))) * grid.cell_volume
        w = w_new
        rel = change / max(scale, 1e-300)
        inner_tol = max(min(0.05 * rel, 1e-2), 0.02 * tol)
        _push_residual(report, change, scale + 1e-300)
        if change <= tol * max(scale, 1e-300):
            converged = True
            break
    _finish(report, converged, t0)
    T = spectral.invert_emission_many(medium.absorption, w, sgrid, t_guess=T)
    if J0 is None:
        # Recover the per-frequency mean intensities at the converged state
        # (warm start: blackbody proportions hold near equilibrium).
        B = spectral.planck(sgrid.nodes, T[:, None])
        J0, _ = scattered_mean_intensity(
            grid, sgrid, alphas_a, alphas_s, B, b4pi,
            tol=min(tol, 1e-10), max_iter=inner_max_iter, init=FOUR_PI * B)
    report.conservation_norm = float(report.residual_history[-1]) if report.residual_history else 0.0
    radiation = None
    if return_radiation:
        radiation = RadiationField(_reconstruct_radiation(
            domain, grids, medium, g, T, J0))
    return (ScalarField(w, "f_of_T"), ScalarField(T, "temperature"), radiation,
            report, J0)


def _solve_combined_angular(domain, medium, g, grids, tol, max_iter, inner_max_iter, t0):
    """Fallback for tabulated kernels: angular source-iteration inner solves."""
    grid, angular, sgrid = grids.spatial, grids.angular, grids.spectral
    alphas_a = medium.absorption(sgrid.nodes)
    alphas_s = medium.scattering(sgrid.nodes)
    beta = alphas_a + alphas_s
    K, _ = medium.kernel_matrix(angular)
    Kw = K * angular.weights[None, :]
    sweeper = RaySweeper(domain, grid, angular, grids.ray_h)
    A, J, M = angular.n_nodes, sgrid.n_nodes, grid.n_nodes
    gvals = g.evaluate(angular.nodes, sgrid.nodes)
    s_all = np.empty((A, M))
    for i in range(A):
        s_all[i] = geometry.exit_lengths(domain, grid.centers, angular.nodes[i])
    bterm = np.exp(-s_all[:, :, None] * beta) * gvals[:, None, :]  # (A, M, J)

    w = np.zeros(M)
    T = np.zeros(M)
    I = np.transpose(bterm, (1, 0, 2)).copy()
    report = SolverReport(tolerance=tol, norm="L1(Omega), relative")
    converged = False
    inner_tol = 1e-2
    for _ in range(max_iter):
        T = spectral.invert_emission_many(medium.absorption, w, sgrid, t_guess=T)
        B = spectral.planck(sgrid.nodes, T[:, None])
        emit = alphas_a * B  # (M, J)
        i_scale = float(np.max(np.abs(I))) + float(np.max(np.abs(emit))) + 1e-300
        for inner in range(inner_max_iter):
            Phi = np.einsum("ik,mkj->mij", Kw, I) * alphas_s + emit[:, None, :]
            I_new = np.empty_like(I)
            for i in range(A):
                box = grid.embed(Phi[:, i, :])
                contrib, _ = sweeper.line_integrals(i, box, beta)
                I_new[:, i, :] = bterm[i] + contrib
            delta = float(np.max(np.abs(I_new - I)))
            I = I_new
            if delta <= inner_tol * i_scale:
                break
        else:
            raise InnerDiverged("angular inner solve hit its iteration cap")
        absorbed = np.einsum("i,mij->mj", angular.weights, I)
        w_new = (sgrid.weights * alphas_a) @ absorbed.T / FOUR_PI
        change = float(np.sum(np.abs(w_new - w))) * grid.cell_volume
        scale = float(np.sum(np.abs(w_new))) * grid.cell_volume
        w = w_new
        rel = change / max(scale, 1e-300)
        inner_tol = max(min(0.05 * rel, 1e-2), 0.02 * tol)
        _push_residual(report, change, scale + 1e-300)
        if change <= tol * max(scale, 1e-300):
            converged = True
            break
    _finish(report, converged, t0)
    T = spectral.invert_emission_many(medium.absorption, w, sgrid, t_guess=T)
    report.conservation_norm = float(report.residual_history[-1]) if report.residual_history else 0.0
    J0 = np.einsum("i,mij->mj", angular.weights, I)
    return (ScalarField(w, "f_of_T"), ScalarField(T, "temperature"), RadiationField(I),
            report, J0)


def _reconstruct_radiation(domain, grids, medium, g, T, J0):
    """One formal-solution pass: radiance at every (node, direction, frequency)."""
    grid, angular, sgrid = grids.spatial, grids.angular, grids.spectral
    alphas_a = medium.absorption(sgrid.nodes)
    alphas_s = medium.scattering(sgrid.nodes)
    beta = alphas_a + alphas_s
    B = spectral.planck(sgrid.nodes, np.asarray(T, dtype=float)[:, None])
    src = alphas_a * B + (alphas_s / FOUR_PI) * J0
    box = grid.embed(src)
    sweeper = RaySweeper(domain, grid, angular, grids.ray_h)
    gvals = g.evaluate(angular.nodes, sgrid.nodes)
    I = np.empty((grid.n_nodes, angular.n_nodes, sgrid.n_nodes))
    for i in range(angular.n_nodes):
        contrib, s = sweeper.line_integrals(i, box, beta)
        I[:, i, :] = np.exp(-np.outer(s, beta)) * gvals[i] + contrib
    return I


# ---------------------------------------------------------------------------
# Duhamel-series certificate
# ---------------------------------------------------------------------------


def duhamel_theta(alpha_a, alpha_s, D: float):
    """Closed-form bound on the angle-integrated absorption response:
    alpha_a (1 - e^{-beta D}) / (alpha_a + alpha_s e^{-beta D}) per frequency.
    """
    alpha_a = np.asarray(alpha_a, dtype=float)
    alpha_s = np.asarray(alpha_s, dtype=float)
    beta = alpha_a + alpha_s
    decay = np.exp(-beta * D)
    with np.errstate(invalid="ignore", divide="ignore"):
        theta = alpha_a * (1.0 - decay) / (alpha_a + alpha_s * decay)
    return np.where(beta > 0.0, theta, 0.0)


@dataclass
class HCertificate:
    """Accumulated absorption response and its a-priori geometric bound."""

    values: np.ndarray  # (M, A, J)
    angular_integral: np.ndarray  # (M, J)
    terms_used: int
    term_bounds: list
    theta_bound: np.ndarray  # (J,)
    eps_trunc: float


def compute_H(
    domain: ConvexDomain,
    medium: MediumSpec,
    grids: Grids,
    eps_trunc: float = 1e-10,
    max_terms: int = 400,
) -> HCertificate:
    """Sum the multiple-scattering series for the absorption response field.

    Term zero is the direct-absorption transit integral along each ray;
    every further term applies the scattering transfer operator by ray
    quadrature.  Truncation stops at the first term whose closed-form
    geometric bound drops below ``eps_trunc``; partial angular integrals are
    checked to increase monotonically.
    """
    grid, angular, sgrid = grids.spatial, grids.angular, grids.spectral
    alphas_a = medium.absorption(sgrid.nodes)
    alphas_s = medium.scattering(sgrid.nodes)
    beta = alphas_a + alphas_s
    if np.any(beta <= 0.0):
        raise ValueError("compute_H requires positive total extinction on the grid")
    K, _ = medium.kernel_matrix(angular)
    Kw = K * angular.weights[None, :]
    D = geometry.diameter(domain)
    sweeper = RaySweeper(domain, grid, angular, grids.ray_h)
    A, J, M = angular.n_nodes, sgrid.n_nodes, grid.n_nodes

    s_all = np.empty((A, M))
    for i in range(A):
        s_all[i] = geometry.exit_lengths(domain, grid.centers, angular.nodes[i])

    # Term 0: (alpha_a / (4 pi beta)) (1 - e^{-beta s}).
    term = np.empty((M, A, J))
    for i in range(A):
        term[:, i, :] = (alphas_a / (FOUR_PI * beta)) * (-np.expm1(-np.outer(s_all[i], beta)))
    H = term.copy()
    angint = np.einsum("i,mij->mj", angular.weights, H)
    reach = 1.0 - np.exp(-beta * D)
    term_bounds = [list(alphas_a / beta * reach)]
    terms = 1
    while terms < max_terms:
        next_bound = alphas_a * alphas_s**terms / beta ** (terms + 1) * reach ** (terms + 1)
        if float(np.max(next_bound)) <= eps_trunc:
            break
        Phi = np.einsum("ik,mkj->mij", Kw, term)
        new_term = np.empty_like(term)
        for i in range(A):
            box = grid.embed(Phi[:, i, :])
            contrib, _ = sweeper.line_integrals(i, box, beta)
            new_term[:, i, :] = contrib * alphas_s
        term = new_term
        H += term
        new_angint = np.einsum("i,mij->mj", angular.weights, H)
        if np.any(new_angint < angint - 1e-12):
            raise MonotonicityError("partial sums of the response series decreased")
        angint = new_angint
        term_bounds.append([float(x) for x in next_bound])
        terms += 1
    return HCertificate(
        values=H,
        angular_integral=angint,
        terms_used=terms,
        term_bounds=term_bounds,
        theta_bound=duhamel_theta(alphas_a, alphas_s, D),
        eps_trunc=eps_trunc,
    )


# ---------------------------------------------------------------------------
# Brute-force oracle
# ---------------------------------------------------------------------------

ORACLE_MAX_UNKNOWNS = 100_000


@dataclass
class OracleResult:
    radiation: RadiationField
    w: ScalarField | None
    T: ScalarField | None
    iterations: int


def oracle_solve(
    domain: ConvexDomain,
    medium: MediumSpec,
    g: BoundarySource,
    grids: Grids,
    tol: float = 1e-10,
    max_iter: int = 5000,
) -> OracleResult:
    """Dense fixed-point reference: direct ray marching every iteration.

    No kernel stencils or convolution shortcuts; the full radiance array is
    re-swept from the current temperature and in-scattered field each pass.
    Intended for small instances and used in tests and `radbody oracle`.
    """
    grid, angular, sgrid = grids.spatial, grids.angular, grids.spectral
    M, A, J = grid.n_nodes, angular.n_nodes, sgrid.n_nodes
    if M * A * J > ORACLE_MAX_UNKNOWNS:
        raise TooLarge(f"oracle limited to {ORACLE_MAX_UNKNOWNS} unknowns, got {M * A * J}")
    alphas_a = medium.absorption(sgrid.nodes)
    alphas_s = medium.scattering(sgrid.nodes)
    beta = alphas_a + alphas_s
    emitting = bool(np.max(alphas_a) > 0.0)
    K, _ = medium.kernel_matrix(angular)
    Kw = K * angular.weights[None, :]
    sweeper = RaySweeper(domain, grid, angular, grids.ray_h)
    gvals = g.evaluate(angular.nodes, sgrid.nodes)
    s_all = np.empty((A, M))
    for i in range(A):
        s_all[i] = geometry.exit_lengths(domain, grid.centers, angular.nodes[i])
    bterm = np.exp(-s_all[:, :, None] * beta) * gvals[:, None, :]

    I = np.zeros((M, A, J))
    w = np.zeros(M)
    T = np.zeros(M)
    its = 0
    for it in range(max_iter):
        its = it + 1
        if emitting:
            T = spectral.invert_emission_many(medium.absorption, w, sgrid, t_guess=T)
        B = spectral.planck(sgrid.nodes, T[:, None]) if emitting else np.zeros((M, J))
        Phi = alphas_a * B[:, None, :] + alphas_s * np.einsum("ik,mkj->mij", Kw, I)
        I_new = np.empty_like(I)
        for i in range(A):
            box = grid.embed(Phi[:, i, :])
            contrib, _ = sweeper.line_integrals(i, box, beta)
            I_new[:, i, :] = bterm[i] + contrib
        delta_I = float(np.max(np.abs(I_new - I)))
        I = I_new
        scale = float(np.max(np.abs(I))) + 1e-300
        if emitting:
            absorbed = np.einsum("i,mij->mj", angular.weights, I)
            w_new = (sgrid.weights * alphas_a) @ absorbed.T / FOUR_PI
            delta_w = float(np.max(np.abs(w_new - w)))
            w = w_new
            wscale = float(np.max(np.abs(w))) + 1e-300
        else:
            delta_w, wscale = 0.0, 1.0
        if delta_I <= tol * scale and delta_w <= tol * wscale:
            break
    if emitting:
        T = spectral.invert_emission_many(medium.absorption, w, sgrid, t_guess=T)
        return OracleResult(RadiationField(I), ScalarField(w, "f_of_T"),
                            ScalarField(T, "temperature"), its)
    return OracleResult(RadiationField(I), None, None, its)


# ---------------------------------------------------------------------------
# Solution container and radiance reconstruction
# ---------------------------------------------------------------------------


@dataclass
class Solution:
    """Converged state plus everything needed to evaluate radiance anywhere."""

    mode: str
    domain: ConvexDomain
    grids: Grids
    medium: MediumSpec
    source: BoundarySource
    report: SolverReport
    w: ScalarField | None = None
    T: ScalarField | None = None
    radiation: RadiationField | None = None
    J0: np.ndarray | None = None  # (M, J) angle-integrated radiance
    _shared_box_cache: np.ndarray | None = None

    def emission_rates(self):
        sgrid = self.grids.spectral
        return self.medium.absorption(sgrid.nodes), self.medium.scattering(sgrid.nodes)

    def source_box_for_angle(self, i: int, angular: AngularGrid | None = None):
        """(box (nx,ny,nz,J), rates (J,), post_factor (J,)) for ray integrals.

        For temperature modes the emission source is direction independent
        and cached; for the scattering mode the in-scattered source depends
        on the target direction (native angular grid only).
        """
        grid, sgrid = self.grids.spatial, self.grids.spectral
        alphas_a, alphas_s = self.emission_rates()
        beta = alphas_a + alphas_s
        if self.mode == "scattering":
            if angular is not None and angular is not self.grids.angular:
                raise ValueError("scattering radiance is only defined on its native grid")
            if self.radiation is None:
                raise ValueError("scattering solution lacks its radiation field")
            K, _ = self.medium.kernel_matrix(self.grids.angular)
            Kw = K * self.grids.angular.weights[None, :]
            Phi = np.einsum("k,mkj->mj", Kw[i], self.radiation.values)
            return grid.embed(Phi), beta, beta
        if self._shared_box_cache is None:
            B = spectral.planck(sgrid.nodes, self.T.values[:, None])
            src = alphas_a * B
            if self.J0 is not None:
                src = src + (alphas_s / FOUR_PI) * self.J0
            self._shared_box_cache = grid.embed(src)
        return self._shared_box_cache, beta, np.ones(sgrid.n_nodes)

    def diagnostic_angular(self, angular: AngularGrid | None) -> AngularGrid:
        if angular is None or self.mode == "scattering":
            return self.grids.angular
        return angular

    def interior_radiance(self, i: int, angular: AngularGrid | None = None,
                          ray_h: float | None = None,
                          _sweeper: RaySweeper | None = None) -> np.ndarray:
        """Radiance (M, J) for direction i of an angular grid (native default)."""
        grid, sgrid = self.grids.spatial, self.grids.spectral
        ang = self.diagnostic_angular(angular)
        box, rates, post = self.source_box_for_angle(i, ang)
        sweeper = _sweeper or RaySweeper(self.domain, grid, ang,
                                         ray_h if ray_h is not None else self.grids.ray_h)
        contrib, s = sweeper.line_integrals(i, box, rates)
        gvals = self.source.evaluate(ang.nodes, sgrid.nodes)
        return np.exp(-np.outer(s, rates)) * gvals[i] + contrib * post

    def boundary_radiance(self, points: np.ndarray, normals: np.ndarray,
                          angular: AngularGrid | None = None,
                          ray_h: float | None = None) -> np.ndarray:
        """Radiance (S, A, J) at boundary points for all angular directions.

        Incoming directions carry the boundary source; outgoing directions
        integrate the formal solution along the full chord.
        """
        grid, sgrid = self.grids.spatial, self.grids.spectral
        ang = self.diagnostic_angular(angular)
        S = points.shape[0]
        A, J = ang.n_nodes, sgrid.n_nodes
        out = np.empty((S, A, J))
        gvals = self.source.evaluate(ang.nodes, sgrid.nodes)
        if ray_h is None:
            ray_h = self.grids.ray_h or geometry.diameter(self.domain) / 128.0
        for i in range(A):
            n = ang.nodes[i]
            mu = normals @ n
            incoming = mu <= 0.0
            out[incoming, i, :] = gvals[i]
            idx = np.flatnonzero(~incoming)
            if idx.size == 0:
                continue
            box, rates, post = self.source_box_for_angle(i, ang)
            chords = geometry.boundary_chord(self.domain, points[idx], n)
            contrib = _chord_integrals(grid, box, points[idx], chords, n, rates, ray_h)
            out[idx, i, :] = np.exp(-np.outer(chords, rates)) * gvals[i] + contrib * post
        return out


def _chord_integrals(grid, box, end_points, lengths, direction, rates, ray_h):
    """integral_0^L e^{-rate (L - xi)} f(end - (L - xi) * direction) d xi."""
    N = end_points.shape[0]
    n_int = np.maximum(np.ceil(np.asarray(lengths) / ray_h).astype(int), 2)
    n_int += n_int % 2
    counts = n_int + 1
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    ray_of = np.repeat(np.arange(N), counts)
    k = np.arange(int(np.sum(counts))) - starts[ray_of]
    nn = n_int[ray_of]
    L = np.asarray(lengths)[ray_of]
    xi = L * (k / nn)
    coeff = np.where((k == 0) | (k == nn), 1.0, np.where(k % 2 == 1, 4.0, 2.0))
    base_w = coeff * L / (3.0 * nn)
    pos = end_points[ray_of] - (L - xi)[:, None] * direction
    vals = grid.sample(box, pos)
    rates_arr = np.atleast_1d(np.asarray(rates, dtype=float))
    att = np.exp(-np.outer(L - xi, rates_arr))
    if vals.ndim == 1:
        vals = vals[:, None]
    return np.add.reduceat(vals * att * base_w[:, None], starts, axis=0)
