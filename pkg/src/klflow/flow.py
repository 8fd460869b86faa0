"""Reynolds-weighted random vector field built on a scalar KL field.

For a constant underlying velocity ``u`` the turbulent field is

    U_a(x) = u_a * (1 + A * W * T(x)),   W = (RE - RE_*)^beta if RE > RE_* else 0,

with ``RE = |u| L / nu`` and ``T`` the scalar Gaussian field of the basis.
The field carries no time dependence for constant ``u``; ``t`` is kept on the
config only so reports record it.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np
from scipy.special import factorial2

from . import grf, mcstats
from .geometry import integrate
from .spectral import KLBasis, basis_integrals

CHECKS = ("mean", "cov", "structure", "moments", "sobolev")


@dataclass(frozen=True)
class FlowConfig:
    """Parameters of the weighted flow.

    ``beta`` must lie in ``(0, 1/2]``; the boundary ``RE == re_star`` is
    laminar (the weight switches on only for ``RE > re_star``).
    """

    u: tuple
    nu: float
    A: float = 1.0
    beta: float = 0.5
    re_star: float = 2000.0
    L: float = 1.0
    T: float = 1.0
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "u", tuple(float(c) for c in np.atleast_1d(self.u)))
        if not all(np.isfinite(self.u)):
            raise ValueError("velocity components must be finite")
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if not np.isfinite(self.A):
            raise ValueError("amplitude A must be finite")
        if not 0 < self.beta <= 0.5:
            raise ValueError(f"beta must lie in (0, 0.5], got {self.beta}")
        if not self.re_star >= 0:
            raise ValueError(f"re_star must be non-negative, got {self.re_star}")
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if not np.isfinite(self.reynolds):
            raise ValueError("Reynolds number is not finite")

    @classmethod
    def for_basis(cls, basis: KLBasis, u, nu: float, **kw) -> "FlowConfig":
        cfg = cls(u=tuple(np.atleast_1d(u)), nu=nu, L=basis.domain.length_scale, **kw)
        check_compatible(cfg, basis)
        return cfg

    @property
    def velocity(self) -> np.ndarray:
        return np.asarray(self.u)

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.u))

    @property
    def reynolds(self) -> float:
        return self.speed * self.L / self.nu

    @property
    def weight(self) -> float:
        return weighting(self, self.reynolds)

    @property
    def laminar(self) -> bool:
        return self.weight == 0.0

    def with_nu(self, nu: float) -> "FlowConfig":
        return replace(self, nu=nu)

    def describe(self) -> dict:
        out = asdict(self)
        out["u"] = list(self.u)
        return out


@dataclass(frozen=True)
class TurbulentSample:
    config: FlowConfig
    field: grf.GRFSample
    values: np.ndarray


def check_compatible(config: FlowConfig, basis: KLBasis) -> None:
    if len(config.u) != basis.domain.dim:
        raise ValueError(f"velocity has {len(config.u)} components but the domain is "
                         f"{basis.domain.dim}-dimensional")


def reynolds(config: FlowConfig, speed: float) -> float:
    if speed < 0:
        raise ValueError("speed must be non-negative")
    return speed * config.L / config.nu


def weighting(config: FlowConfig, re: float) -> float:
    """``(re - re_star)^beta`` above the critical value, zero otherwise."""
    if re < 0:
        raise ValueError("Reynolds number must be non-negative")
    return float((re - config.re_star) ** config.beta) if re > config.re_star else 0.0


def _weight_field(config: FlowConfig, u_field: np.ndarray) -> np.ndarray:
    re = np.linalg.norm(u_field, axis=-1) * config.L / config.nu
    return np.where(re > config.re_star,
                    np.maximum(re - config.re_star, 0.0) ** config.beta, 0.0)


def turbulent_values(config: FlowConfig, basis: KLBasis, xi, u_field=None) -> np.ndarray:
    """Vector field at the nodes for draws ``xi``, shape ``(..., node_count, dim)``.

    ``u_field`` optionally gives a nonconstant underlying velocity per node;
    analytic moment formulas elsewhere in this module assume it is absent.
    """
    xi = np.asarray(xi, dtype=float)
    lead = xi.shape[:-1]
    n, d = basis.domain.node_count, basis.domain.dim
    if u_field is None:
        check_compatible(config, basis)
        if config.laminar:
            return np.broadcast_to(config.velocity, lead + (n, d)).copy()
        t = grf.field_values(basis, xi)
        return config.velocity * (1.0 + config.A * config.weight * t)[..., None]
    u_field = np.asarray(u_field, dtype=float)
    if u_field.shape != (n, d):
        raise ValueError(f"u_field must have shape {(n, d)}, got {u_field.shape}")
    w = _weight_field(config, u_field)
    t = grf.field_values(basis, xi)
    return u_field * (1.0 + config.A * w * t)[..., None]


def turbulent_gradient(config: FlowConfig, basis: KLBasis, xi) -> np.ndarray:
    """``d_b U_a`` for constant ``u``, shape ``(..., node_count, dim_a, dim_b)``."""
    g = grf.field_gradient(basis, xi)
    return config.A * config.weight * config.velocity[:, None] * g[..., None, :]


def sample_turbulent(config: FlowConfig, basis: KLBasis, seed: int, draw: int = 0,
                     u_field=None) -> TurbulentSample:
    s = grf.sample(basis, seed, draw)
    return TurbulentSample(config, s, turbulent_values(config, basis, s.xi, u_field))


def covariance(config: FlowConfig, basis: KLBasis, x: int, y: int) -> np.ndarray:
    """``Cov_ab(x, y) = A^2 u_a u_b W^2 K(x, y)`` with the basis Mercer sum for ``K``."""
    k = basis.mercer([x], [y])[0, 0]
    u = config.velocity
    return config.A**2 * config.weight**2 * np.outer(u, u) * k


def structure_function(config: FlowConfig, basis: KLBasis, x: int, ell: Sequence[int],
                       draws: int = 0, seed: int = 0, workers: int | None = None) -> dict:
    """Second-order structure function at node ``x`` for a grid offset ``ell``.

    ``ell`` counts grid steps per axis; the physical separation is reported.
    With ``draws > 0`` a Monte Carlo estimate is added.
    """
    y = basis.domain.offset_node(x, ell)
    var = basis.variance
    scale = config.A**2 * config.speed**2 * config.weight**2
    m = basis.mercer([x], [y])[0, 0]
    out = {"x": int(x), "y": int(y),
           "separation": (basis.domain.nodes[y] - basis.domain.nodes[x]).tolist(),
           "analytic": float(scale * (var[x] + var[y] - 2.0 * m)) if x != y else 0.0}
    if draws:
        def stat(xi):
            u = turbulent_values(config, basis, xi)
            return np.sum((u[:, y] - u[:, x]) ** 2, axis=-1)[:, None]
        est = mcstats.run(stat, seed, draws, basis.size, workers)
        out["monte_carlo"] = float(est.mean[0])
        out["standard_error"] = float(est.standard_error[0])
    return out


def mean_abs_difference(config: FlowConfig, basis: KLBasis, x: int, y: int, draws: int,
                        seed: int = 0, workers: int | None = None) -> dict:
    """Monte Carlo ``E[U(x) - U(y)]``, which equals ``u(x) - u(y) = 0`` for constant ``u``."""
    def stat(xi):
        u = turbulent_values(config, basis, xi)
        return u[:, x] - u[:, y]
    est = mcstats.run(stat, seed, draws, basis.size, workers)
    return {"estimate": est.mean.tolist(), "standard_error": est.standard_error.tolist(),
            "expected": [0.0] * basis.domain.dim}


def moment_bound(config: FlowConfig, basis: KLBasis, x: int, p: int) -> np.ndarray:
    """Upper bound on ``E|U_a(x)|^p`` per component from ``|a+b|^p <= 2^(p-1)(|a|^p + |b|^p)``.

    The noise moment uses the exact Gaussian value ``(p-1)!! sigma^p``.
    """
    u = np.abs(config.velocity)
    noise = factorial2(p - 1, exact=True) * basis.variance[x] ** (p / 2)
    return 2.0 ** (p - 1) * u**p * (1.0 + abs(config.A * config.weight) ** p * noise)


def moment_bound_check(config: FlowConfig, basis: KLBasis, x: int, p: int, draws: int,
                       seed: int = 0, workers: int | None = None) -> dict:
    if p < 2 or p % 2:
        raise ValueError(f"p must be an even integer >= 2, got {p}")

    def stat(xi):
        return np.abs(turbulent_values(config, basis, xi)[:, x]) ** p

    est = mcstats.run(stat, seed, draws, basis.size, workers)
    bound = moment_bound(config, basis, x, p)
    paper_shape = (2.0 ** (p - 1) * np.abs(config.velocity) ** p
                   * (1.0 + abs(config.A * config.weight) ** p * grf.paper_convention_moment(basis, x, p)))
    return {"p": p, "node": int(x), "estimate": est.mean.tolist(),
            "standard_error": est.standard_error.tolist(), "bound": bound.tolist(),
            "paper_shape_bound": paper_shape.tolist(),
            "within_bound": bool(np.all(est.mean <= bound))}


def gradient_moment(config: FlowConfig, basis: KLBasis, x: int, p: int, draws: int,
                    seed: int = 0, workers: int | None = None) -> dict:
    """Monte Carlo ``E|d_b U_a(x)|^p`` with the exact ``p = 2`` value alongside."""
    if p < 2 or p % 2:
        raise ValueError(f"p must be an even integer >= 2, got {p}")

    def stat(xi):
        return np.abs(turbulent_gradient(config, basis, xi)[:, x]) ** p

    est = mcstats.run(stat, seed, draws, basis.size, workers)
    grad2 = basis.eigenvalues @ basis.gradients[:, x, :] ** 2          # (dim_b,)
    u = config.velocity
    analytic = config.A**2 * config.weight**2 * np.outer(u**2, grad2)
    out = {"p": p, "node": int(x), "estimate": est.mean.tolist(),
           "standard_error": est.standard_error.tolist()}
    if p == 2:
        out["analytic"] = analytic.tolist()
        out["analytic_total"] = float(analytic.sum())
    else:
        # Each component is Gaussian with variance given by the p = 2 value.
        out["analytic"] = (factorial2(p - 1, exact=True) * analytic ** (p / 2)).tolist()
    return out


def vector_sobolev_expectation(config: FlowConfig, basis: KLBasis, s: int) -> float:
    """``E ||U||^2_{H^s}`` for constant ``u``, ``s`` in {1, 2}."""
    if s not in (1, 2):
        raise ValueError(f"Sobolev order must be 1 or 2, got {s}")
    z = basis.eigenvalues
    ints = basis_integrals(basis)
    u2 = config.speed**2
    noise = config.A**2 * u2 * config.weight**2
    total = u2 * basis.domain.volume + noise * float(np.sum(z * ints["H"]) + np.sum(z * ints["H_grad"]))
    if s == 2:
        h = basis.hessians
        total += noise * float(np.sum(z * integrate(basis.domain, np.sum(h * h, axis=(-1, -2)))))
    return float(total)


def vector_norm_statistics(config: FlowConfig, basis: KLBasis, xi, order: int = 1) -> np.ndarray:
    """Per-draw ``||U||^2_{H^order}`` by quadrature, shape ``(k, 1)``."""
    d = basis.domain
    u = turbulent_values(config, basis, xi)
    g = turbulent_gradient(config, basis, xi)
    total = integrate(d, np.sum(u * u, axis=-1)) + integrate(d, np.sum(g * g, axis=(-1, -2)))
    if order == 2:
        h = grf.field_hessian(basis, xi)
        c = (config.A * config.weight) ** 2 * config.speed**2
        total = total + c * integrate(d, np.sum(h * h, axis=(-1, -2)))
    return np.asarray(total)[:, None]


def _probe_nodes(basis: KLBasis, count: int, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(2**31 + 1,))))
    return rng.choice(basis.domain.node_count, size=min(count, basis.domain.node_count), replace=False)


def verify(config: FlowConfig, basis: KLBasis, draws: int = 100_000, seed: int = 0,
           checks: Sequence[str] = CHECKS, workers: int | None = None,
           laminar_seeds: int = 100, sobolev_draws: int | None = None) -> dict:
    """Run the requested vector-field checks and return a JSON-ready report."""
    unknown = set(checks) - set(CHECKS)
    if unknown:
        raise ValueError(f"unknown checks {sorted(unknown)}; choose from {CHECKS}")
    check_compatible(config, basis)
    n, N, d = basis.domain.node_count, basis.size, basis.domain.dim
    u = config.velocity
    probes = _probe_nodes(basis, 5, seed)
    results = []

    def add(name, passed, **extra):
        results.append({"name": name, "passed": bool(passed), **extra})

    # Laminar gate: push RE to the critical value and require the exact base flow.
    lam_cfg = config
    if config.speed > 0 and config.re_star > 0:
        nu = config.speed * config.L / config.re_star
        while config.speed * config.L / nu > config.re_star:
            nu = np.nextafter(nu, np.inf)
        lam_cfg = config.with_nu(float(nu))
    exact = all(np.array_equal(sample_turbulent(lam_cfg, basis, seed + k).values,
                               np.broadcast_to(u, (n, d))) for k in range(laminar_seeds))
    add("laminar_gate", exact and lam_cfg.laminar, seeds=laminar_seeds, nu=lam_cfg.nu)

    if "mean" in checks:
        est = mcstats.run(lambda xi: turbulent_values(config, basis, xi).reshape(len(xi), -1),
                          seed, draws, N, workers)
        z = mcstats.z_score(est.mean, np.tile(u, n), est.standard_error)
        add("mean_equals_base_flow", np.all(z <= 4.0), max_z=float(np.max(z)), tolerance="4 SE")
        diff = mean_abs_difference(config, basis, int(probes[0]), int(probes[1]),
                                   max(draws // 10, 1000), seed + 5, workers)
        zd = mcstats.z_score(diff["estimate"], 0.0, diff["standard_error"])
        add("mean_difference_zero", np.all(zd <= 4.0), max_z=float(np.max(zd)), **diff)

    if "cov" in checks:
        j, k = int(probes[0]), int(probes[1])
        scale = config.A**2 * config.weight**2 * np.outer(u, u)
        mask = scale != 0

        def stat(xi):
            v = turbulent_values(config, basis, xi) - u
            return (v[:, j, :, None] * v[:, k, None, :]).reshape(len(xi), -1)

        est = mcstats.run(stat, seed + 1, draws, N, workers)
        cov = est.mean.reshape(d, d)
        se = est.standard_error.reshape(d, d)
        mercer = basis.mercer([j], [k])[0, 0]
        if np.any(mask):
            ratios = cov[mask] / scale[mask]
            spread = float(np.ptp(ratios) / max(np.max(np.abs(ratios)), 1e-300))
            z = mcstats.z_score(ratios, mercer, se[mask] / np.abs(scale[mask]))
            add("covariance_factorization", spread <= 1e-10 and np.all(z <= 3.0),
                relative_spread=spread, max_z=float(np.max(z)), mercer=float(mercer),
                ratios=ratios.tolist(), nodes=[j, k])
        analytic = covariance(config, basis, j, k)
        z = mcstats.z_score(cov, analytic, se)
        add("covariance_matrix", np.all(z <= 3.0), max_z=float(np.max(z)),
            estimate=cov.tolist(), analytic=analytic.tolist())

    if "structure" in checks:
        s0 = structure_function(config, basis, int(probes[0]), [0] * d)
        add("structure_function_zero_lag", s0["analytic"] == 0.0, value=s0["analytic"])
        centre = basis.domain.flat_index([basis.domain.nodes_per_axis // 2] * d)
        step = [max(1, basis.domain.nodes_per_axis // 8)] + [0] * (d - 1)
        fwd = structure_function(config, basis, centre, step, draws, seed + 2, workers)
        z = float(mcstats.z_score(fwd["monte_carlo"], fwd["analytic"], fwd["standard_error"]))
        add("structure_function_monte_carlo", z <= 3.0, z=z, **fwd)
        # Swapping the two points, or reflecting both through the box centre,
        # leaves the value unchanged.
        swapped = structure_function(config, basis, fwd["y"], [-s for s in step])
        top = basis.domain.nodes_per_axis - 1
        mirror = basis.domain.flat_index([top - i for i in basis.domain.multi_index(centre)])
        reflected = structure_function(config, basis, mirror, [-s for s in step])
        ref = max(abs(fwd["analytic"]), 1e-300)
        rel = max(abs(fwd["analytic"] - swapped["analytic"]),
                  abs(fwd["analytic"] - reflected["analytic"])) / ref
        add("structure_function_symmetric", rel <= 1e-6, relative_difference=rel)

    if "moments" in checks:
        for p in (2, 4):
            for x in probes[:3]:
                res = moment_bound_check(config, basis, int(x), p, draws, seed + 3, workers)
                add(f"moment_bound_p{p}", res["within_bound"], **res)
        gm = gradient_moment(config, basis, int(probes[0]), 2, draws, seed + 4, workers)
        est, ana = np.asarray(gm["estimate"]), np.asarray(gm["analytic"])
        z = mcstats.z_score(est, ana, gm["standard_error"])
        add("gradient_second_moment", np.all(z <= 3.0), max_z=float(np.max(z)), **gm)

    if "sobolev" in checks:
        sd = sobolev_draws or max(draws // 10, 1000)
        est = mcstats.run(lambda xi: vector_norm_statistics(config, basis, xi), seed + 6, sd, N, workers)
        expected = vector_sobolev_expectation(config, basis, 1)
        z = float(mcstats.z_score(est.mean[0], expected, est.standard_error[0]))
        add("h1_norm_expectation", z <= 3.0, estimate=float(est.mean[0]), expected=expected,
            standard_error=float(est.standard_error[0]), z=z)

    return {
        "kind": "flow-verify",
        "config": config.describe(),
        "basis": basis.describe(),
        "draws": draws,
        "seed": seed,
        "checks": results,
        "passed": all(r["passed"] for r in results),
    }
