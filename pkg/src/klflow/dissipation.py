"""Inviscid-limit experiments for the weighted flow.

For constant ``u`` the expected dissipation over a horizon ``T`` is

    D(nu) = nu * T * E int |grad U|^2 dV
          = S(nu) * A^2 |u|^2 T * sum_I Z_I H_grad_I,

with ``S(nu) = nu * (|u| L / nu - RE_*)^(2 beta)``. For ``beta = 1/2`` the
factor tends to ``|u| L`` and ``D`` approaches a positive constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import binom

from . import mcstats
from .flow import FlowConfig, check_compatible, turbulent_gradient, turbulent_values
from .geometry import integrate
from .grf import field_hessian
from .spectral import KLBasis, basis_integrals, dirichlet_derivatives

SLOPE_TOL = 0.05
LIMIT_RTOL = 0.05
MIN_GRID_POINTS = 5
VERDICTS = ("anomalous", "vanishing", "divergent", "inconclusive")


def _exponent(config: FlowConfig, beta: float | None) -> float:
    beta = config.beta if beta is None else float(beta)
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    return beta


def scaling_factor(config: FlowConfig, nu: float, beta: float | None = None) -> float:
    """``nu * (|u| L / nu - RE_*)^(2 beta)`` above the critical value, else 0.

    ``beta`` overrides the config exponent; values above 1/2 are accepted
    here so the divergent regime can be explored.
    """
    if not nu > 0:
        raise ValueError(f"nu must be positive, got {nu}")
    beta = _exponent(config, beta)
    re = config.speed * config.L / nu
    return float(nu * (re - config.re_star) ** (2.0 * beta)) if re > config.re_star else 0.0


def gradient_energy(basis: KLBasis) -> float:
    """``sum_I Z_I H_grad_I``."""
    return float(basis.eigenvalues @ basis_integrals(basis)["H_grad"])


def limit_analytic(config: FlowConfig, basis: KLBasis, T: float | None = None) -> float:
    """``A^2 |u|^3 L T sum_I Z_I H_grad_I``, the ``beta = 1/2`` limit."""
    T = config.T if T is None else T
    return config.A**2 * config.speed**3 * config.L * T * gradient_energy(basis)


def dissipation_analytic(config: FlowConfig, basis: KLBasis, nu_grid, T: float | None = None,
                         beta: float | None = None) -> np.ndarray:
    T = config.T if T is None else T
    c = config.A**2 * config.speed**2 * T * gradient_energy(basis)
    return np.array([scaling_factor(config, nu, beta) * c for nu in np.atleast_1d(nu_grid)])


def dissipation_monte_carlo(config: FlowConfig, basis: KLBasis, nu_grid, draws: int, seed: int = 0,
                            T: float | None = None, workers: int | None = None) -> mcstats.Estimator:
    """Monte Carlo ``nu T int |grad U|^2`` per grid viscosity.

    All viscosities share the same draws, so the ratio between grid points
    is free of sampling noise.
    """
    check_compatible(config, basis)
    T = config.T if T is None else T
    configs = [config.with_nu(float(nu)) for nu in np.atleast_1d(nu_grid)]
    d = basis.domain

    def stat(xi):
        cols = []
        for cfg in configs:
            g = turbulent_gradient(cfg, basis, xi)
            cols.append(cfg.nu * T * integrate(d, np.sum(g * g, axis=(-1, -2))))
        return np.stack(cols, axis=-1)

    return mcstats.run(stat, seed, draws, basis.size, workers)


@dataclass
class DissipationReport:
    config: dict
    nu_grid: np.ndarray
    reynolds: np.ndarray
    D: np.ndarray
    D_se: np.ndarray
    D_analytic: np.ndarray
    slope: float
    limit_analytic: float
    verdict: str
    T: float
    beta: float
    draws: int
    seed: int
    fit_points: int
    extra: dict = field(default_factory=dict)

    def rows(self):
        """``(nu, RE, D_mc, D_se, D_analytic)`` per grid point."""
        return zip(self.nu_grid.tolist(), self.reynolds.tolist(), self.D.tolist(),
                   self.D_se.tolist(), self.D_analytic.tolist())

    def to_dict(self) -> dict:
        return {
            "kind": "dissipation",
            "config": self.config,
            "T": self.T,
            "beta": self.beta,
            "draws": self.draws,
            "seed": self.seed,
            "nu_grid": self.nu_grid.tolist(),
            "reynolds": self.reynolds.tolist(),
            "D": self.D.tolist(),
            "D_se": self.D_se.tolist(),
            "D_analytic": self.D_analytic.tolist(),
            "slope": self.slope,
            "fit_points": self.fit_points,
            "limit_analytic": self.limit_analytic,
            "verdict": self.verdict,
            **self.extra,
        }


def fit_slope(nu_grid, values) -> tuple[float, int]:
    """Least-squares slope of ``log D`` against ``log nu`` over the smallest decade.

    Points with ``D = 0`` (laminar) are dropped.
    """
    nu = np.asarray(nu_grid, dtype=float)
    v = np.asarray(values, dtype=float)
    keep = (v > 0) & (nu <= 10.0 * nu.min() * (1 + 1e-12))
    if keep.sum() < 2:
        raise ValueError("need at least two turbulent grid points in the smallest decade")
    slope = np.polyfit(np.log(nu[keep]), np.log(v[keep]), 1)[0]
    return float(slope), int(keep.sum())


def classify(slope: float, d_min: float, limit: float) -> str:
    if abs(slope) < SLOPE_TOL:
        if limit > 0 and abs(d_min - limit) <= LIMIT_RTOL * limit:
            return "anomalous"
        return "inconclusive"
    return "vanishing" if slope > 0 else "divergent"


def nu_grid(nu_min: float, nu_max: float, points: int) -> np.ndarray:
    """Log-spaced viscosities in decreasing order."""
    if not 0 < nu_min < nu_max:
        raise ValueError(f"need 0 < nu_min < nu_max, got {nu_min}, {nu_max}")
    if points < MIN_GRID_POINTS:
        raise ValueError(f"nu grid needs at least {MIN_GRID_POINTS} points, got {points}")
    return np.geomspace(nu_max, nu_min, points)


def sweep(config: FlowConfig, basis: KLBasis, nu_values: Sequence[float], draws: int = 10_000,
          seed: int = 0, T: float | None = None, workers: int | None = None,
          beta: float | None = None) -> DissipationReport:
    """Dissipation curve over a viscosity grid with slope fit and verdict.

    With ``draws = 0`` only the closed form is evaluated and the fit uses it.
    A ``beta`` override (possibly above 1/2) is honoured by the closed form
    only, since the sampled field is defined for the config exponent.
    """
    nus = np.asarray(nu_values, dtype=float)
    if nus.size < MIN_GRID_POINTS:
        raise ValueError(f"nu grid needs at least {MIN_GRID_POINTS} points, got {nus.size}")
    if np.any(nus <= 0) or np.any(np.diff(nus) >= 0):
        raise ValueError("nu grid must be positive and strictly decreasing")
    T = config.T if T is None else T
    b = _exponent(config, beta)
    analytic = dissipation_analytic(config, basis, nus, T, b)
    if draws and b == config.beta:
        est = dissipation_monte_carlo(config, basis, nus, draws, seed, T, workers)
        d_mc, d_se = est.mean, np.nan_to_num(est.standard_error)
        z = mcstats.z_score(d_mc, analytic, d_se)
    else:
        d_mc, d_se, z = analytic.copy(), np.zeros_like(analytic), np.zeros_like(analytic)
        draws = 0
    slope, used = fit_slope(nus, d_mc)
    limit = limit_analytic(config, basis, T)
    verdict = classify(slope, float(d_mc[-1]), limit)
    return DissipationReport(
        config=config.describe(), nu_grid=nus, reynolds=config.speed * config.L / nus,
        D=np.asarray(d_mc), D_se=np.asarray(d_se), D_analytic=analytic, slope=slope,
        limit_analytic=limit, verdict=verdict, T=T, beta=b, draws=draws, seed=seed,
        fit_points=used,
        extra={"max_z": float(np.max(z)), "mc_within_3se": bool(np.all(z <= 3.0)),
               "factorization_error": float(np.max(np.abs(
                   analytic - np.array([scaling_factor(config, nu, b) for nu in nus])
                   * config.A**2 * config.speed**2 * T * gradient_energy(basis)))),
               "D_smallest_nu_over_limit": float(d_mc[-1] / limit) if limit > 0 else None})


def gradient_blowup_diagnostic(config: FlowConfig, basis: KLBasis, nu_values, node: int,
                               draws: int = 0, seed: int = 0, workers: int | None = None) -> dict:
    """Root-mean-square gradient magnitude ``E[|grad U(x)|^2]^(1/2)`` per viscosity."""
    nus = np.asarray(nu_values, dtype=float)
    local = float(basis.eigenvalues @ np.sum(basis.gradients[:, node, :] ** 2, axis=-1))
    weights = np.array([config.with_nu(nu).weight for nu in nus])
    mag = abs(config.A) * config.speed * weights * np.sqrt(local)
    turbulent = weights > 0
    order = np.argsort(-nus)
    m_sorted = mag[order][turbulent[order]]
    out = {"node": int(node), "nu_grid": nus.tolist(), "magnitude": mag.tolist(),
           "rescaled": (mag * np.sqrt(nus)).tolist(),
           "increasing_as_nu_decreases": bool(np.all(np.diff(m_sorted) > 0)) if m_sorted.size > 1 else True,
           "rescaled_limit": abs(config.A) * config.speed**1.5 * np.sqrt(config.L * local)}
    if draws:
        cfgs = [config.with_nu(nu) for nu in nus]

        def stat(xi):
            return np.stack([np.sum(turbulent_gradient(c, basis, xi)[:, node] ** 2, axis=(-1, -2))
                             for c in cfgs], axis=-1)

        est = mcstats.run(stat, seed, draws, basis.size, workers)
        out["monte_carlo"] = np.sqrt(est.mean).tolist()
        out["mean_square_standard_error"] = est.standard_error.tolist()
    return out


def expected_residual(config: FlowConfig, basis: KLBasis) -> np.ndarray:
    """``E[U.grad U - nu Lap U]`` at the nodes, shape ``(node_count, dim)``.

    Equals ``A^2 W^2 u_a sum_b u_b sum_I Z_I f_I d_b f_I``; the viscous and
    time-derivative terms have zero mean for a static field.
    """
    check_compatible(config, basis)
    cross = np.einsum("i,in,inb->nb", basis.eigenvalues, basis.eigenfunctions, basis.gradients)
    u = config.velocity
    return config.A**2 * config.weight**2 * np.outer(cross @ u, u)


def variance_gradient_fd(basis: KLBasis, step: float = 1e-5) -> np.ndarray:
    """Central differences of ``sigma^2`` at the nodes for an analytic Dirichlet basis."""
    if not basis.analytic:
        raise ValueError("finite differences of the variance need an analytic basis")
    pts = basis.domain.nodes
    out = np.empty(pts.shape)
    for a in range(basis.domain.dim):
        e = np.zeros(basis.domain.dim)
        e[a] = step
        plus = dirichlet_derivatives(basis.domain, basis.modes, pts + e)[0]
        minus = dirichlet_derivatives(basis.domain, basis.modes, pts - e)[0]
        out[:, a] = basis.eigenvalues @ (plus**2 - minus**2) / (2.0 * step)
    return out


def interior_mask(basis: KLBasis, margin: float | None = None) -> np.ndarray:
    """Nodes at least ``margin`` from the boundary; defaults to one kernel length or 10% of the box."""
    if margin is None:
        lam = basis.kernel.lam if basis.kernel is not None and basis.kernel.stationary else 0.0
        margin = min(max(lam, 0.1 * min(basis.domain.side_lengths)), 0.4 * min(basis.domain.side_lengths))
    mask = basis.domain.boundary_distance >= margin
    if not mask.any():
        raise ValueError(f"no nodes lie {margin:g} inside the boundary")
    return mask


def ns_residual(config: FlowConfig, basis: KLBasis, draws: int = 0, seed: int = 0,
                workers: int | None = None, margin: float | None = None) -> dict:
    """Expected Navier-Stokes residual of the weighted flow and its checks.

    Reports the closed form, the identity against ``1/2 grad sigma^2``, the
    interior magnitude relative to ``A^2 |u|^2 W^2 sigma^2 / L``, an
    optional Monte Carlo estimate and, for Dirichlet bases, a comparison with
    finite differences of the variance.
    """
    res = expected_residual(config, basis)
    u = config.velocity
    scale_w = config.A**2 * config.weight**2
    half_grad_var = 0.5 * np.einsum("i,inb->nb", basis.eigenvalues,
                                    2.0 * basis.eigenfunctions[..., None] * basis.gradients)
    identity = scale_w * np.outer(half_grad_var @ u, u)
    mask = interior_mask(basis, margin)
    norm = np.linalg.norm(res, axis=-1)
    sigma_scale = scale_w * config.speed**2 * float(np.max(basis.variance[mask])) / config.L
    out = {
        "expected": res.tolist(),
        "identity_error": float(np.max(np.abs(res - identity))),
        "interior_nodes": int(mask.sum()),
        "interior_max": float(np.max(norm[mask])),
        "scale": sigma_scale,
        "interior_relative": float(np.max(norm[mask]) / sigma_scale) if sigma_scale > 0 else 0.0,
    }
    if basis.analytic:
        fd = scale_w * np.outer(0.5 * variance_gradient_fd(basis) @ u, u)
        ref = max(float(np.max(np.abs(fd))), 1e-300)
        out["finite_difference_error"] = float(np.max(np.abs(res - fd)))
        out["finite_difference_relative"] = float(np.max(np.abs(res - fd)) / ref)
    if draws:
        d = basis.domain.dim

        def stat(xi):
            v = turbulent_values(config, basis, xi)
            g = turbulent_gradient(config, basis, xi)
            lap = np.trace(field_hessian(basis, xi), axis1=-2, axis2=-1)
            visc = config.nu * config.A * config.weight * u * lap[..., None]
            r = np.einsum("knb,knab->kna", v, g) - visc
            return r[:, mask].reshape(len(xi), -1)

        est = mcstats.run(stat, seed, draws, basis.size, workers)
        z = mcstats.z_score(est.mean, res[mask].ravel(), est.standard_error)
        out["monte_carlo_max_z"] = float(np.max(z))
        out["monte_carlo_components"] = int(mask.sum() * d)
    return out


def dissipation_expansion(config: FlowConfig, basis: KLBasis, T: float | None = None) -> dict:
    """Term-by-term expansion of ``nu T E int |grad U|^2`` for ``U = u (1 + A W T)``.

    Writing ``d_b U_a = P_ab + Q_ab T + R_a d_b T`` with ``P = grad u``,
    ``Q = A (W grad u + u grad W)`` and ``R = A W u``, every term except
    ``R^2 E|grad T|^2`` multiplies ``grad u``, ``grad W``, ``E[xi_I] = 0``,
    an off-diagonal ``E[xi_I xi_J] = 0`` or an ``int f grad f`` integral. The
    mean-flow and weight gradients are taken numerically on the grid, so the
    cross terms are accumulated rather than assumed.
    """
    check_compatible(config, basis)
    T = config.T if T is None else T
    dom = basis.domain
    n, d = dom.node_count, dom.dim
    nu = config.nu
    z, sz = basis.eigenvalues, basis.sqrt_eigenvalues
    f, g = basis.eigenfunctions, basis.gradients

    u_field = np.broadcast_to(config.velocity, (n, d))
    w_field = np.full(n, config.weight)

    def grid_grad(values):
        grid = dom.to_grid(values)
        parts = np.gradient(grid, *dom.axes, edge_order=2) if d > 1 else [np.gradient(grid, dom.axes[0], edge_order=2)]
        return np.stack([p.reshape(n) for p in parts], axis=-1)

    P = np.stack([grid_grad(u_field[:, a]) for a in range(d)], axis=1)          # (n, a, b)
    gw = grid_grad(w_field)                                                      # (n, b)
    Q = config.A * (w_field[:, None, None] * P + u_field[:, :, None] * gw[:, None, :])
    R = config.A * w_field[:, None] * u_field                                    # (n, a)

    mean_xi = np.zeros(basis.size)
    mean_T = (sz * mean_xi) @ f                                                  # E[T]
    mean_gT = np.einsum("i,inb->nb", sz * mean_xi, g)                            # E[grad T]
    abs_T = sz @ np.abs(f)
    abs_gT = np.einsum("i,inb->nb", sz, np.abs(g))
    var = basis.variance
    t_grad_t = np.einsum("i,in,inb->nb", z, f, g)                                # E[T d_b T]

    pref = nu * T
    terms = {
        "mean_flow_gradient": pref * integrate(dom, np.sum(P**2, axis=(1, 2))),
        "linear_in_xi": pref * integrate(dom, 2.0 * np.sum(P * Q * mean_T[:, None, None]
                                                           + P * R[:, :, None] * mean_gT[:, None, :], axis=(1, 2))),
        "weight_gradient": pref * integrate(dom, np.sum(Q**2 * var[:, None, None]
                                                        + 2.0 * Q * R[:, :, None] * t_grad_t[:, None, :], axis=(1, 2))),
    }
    linear_unweighted = pref * integrate(dom, 2.0 * np.sum(np.abs(P * Q) * abs_T[:, None, None]
                                                           + np.abs(P * R[:, :, None]) * abs_gT[:, None, :], axis=(1, 2)))

    # Off-diagonal mode products survive quadrature but carry E[xi_I xi_J] = 0.
    r2 = np.sum(R**2, axis=1)
    gram_grad = np.einsum("inb,jnb->ij", g * (r2 * dom.weights)[None, :, None], g)
    coupling = np.outer(sz, sz) * gram_grad
    off = ~np.eye(basis.size, dtype=bool)
    cov_xi = np.eye(basis.size)
    terms["off_diagonal_modes"] = pref * float(np.sum(coupling[off] * cov_xi[off]))
    off_unweighted = pref * float(np.sum(np.abs(coupling[off])))

    # Mean-flow transport of the variance: u_a u_a A^2 W^2 sum_I Z_I int f_I d_b f_I.
    h_a = basis_integrals(basis)["H_a"]
    terms["f_grad_f"] = pref * config.A**2 * config.weight**2 * config.speed**2 * float(np.sum(z @ h_a))

    surviving = pref * integrate(dom, r2 * (z @ np.sum(g * g, axis=-1)))
    simple = pref * config.A**2 * config.weight**2 * config.speed**2 * gradient_energy(basis)
    ref = max(abs(surviving), 1e-300)
    worst = max(abs(v) for v in terms.values())
    return {
        "cross_terms": {k: float(v) for k, v in terms.items()},
        "unweighted_magnitudes": {"linear_in_xi": float(linear_unweighted),
                                  "off_diagonal_modes": off_unweighted},
        "surviving": float(surviving),
        "simple_route": float(simple),
        "routes_relative_difference": float(abs(surviving - simple) / ref),
        "max_cross_relative": float(worst / ref),
        "analytic": float(dissipation_analytic(config, basis, [nu], T)[0]),
    }


def binomial_consistency(config: FlowConfig, nu: float, terms: int, beta: float | None = None) -> dict:
    """Partial sums of ``nu (RE - RE_*)^(2 beta)`` as a binomial series in ``RE_*/RE``."""
    if terms < 1:
        raise ValueError("need at least one term")
    b = _exponent(config, beta)
    re = config.speed * config.L / nu
    if not re > config.re_star:
        raise ValueError(f"binomial series needs RE > RE_* (RE={re:g}, RE_*={config.re_star:g})")
    x = -config.re_star / re
    n = np.arange(terms)
    series = nu * re ** (2 * b) * binom(2 * b, n) * x**n
    partial = np.cumsum(series)
    direct = scaling_factor(config, nu, b)
    nz = series != 0
    mags = np.abs(series[nz])
    ratios = mags[1:] / mags[:-1]
    return {
        "nu": nu, "reynolds": re, "beta": b, "terms": int(terms),
        "partial_sums": partial.tolist(),
        "leading": float(series[0]),
        "direct": direct,
        "relative_error": float(abs(partial[-1] - direct) / abs(direct)),
        "term_ratios": ratios.tolist(),
        "ratio_limit": config.re_star / re,
    }
