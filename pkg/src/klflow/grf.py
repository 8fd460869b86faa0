"""Scalar Gaussian random field sampled from a truncated KL basis.

A draw is a vector ``xi`` of independent standard normals, one per mode; the
field at node ``j`` is ``sum_I sqrt(Z_I) f_I(x_j) xi_I``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import factorial2

from . import mcstats
from .geometry import integrate
from .spectral import EIGENVALUE_FLOOR, KLBasis, basis_integrals

VARIANCE_RTOL = 1e-6


@dataclass(frozen=True)
class GRFSample:
    basis: KLBasis
    xi: np.ndarray
    values: np.ndarray
    seed: int
    draw: int = 0


def field_values(basis: KLBasis, xi) -> np.ndarray:
    """Field at every node for one draw ``(N,)`` or a batch ``(k, N)``."""
    xi = np.asarray(xi, dtype=float)
    return (xi * basis.sqrt_eigenvalues) @ basis.eigenfunctions


def field_gradient(basis: KLBasis, xi) -> np.ndarray:
    """Gradient field, shape ``(..., node_count, dim)``."""
    xi = np.asarray(xi, dtype=float)
    return np.einsum("...i,ina->...na", xi * basis.sqrt_eigenvalues, basis.gradients)


def field_hessian(basis: KLBasis, xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    return np.einsum("...i,inab->...nab", xi * basis.sqrt_eigenvalues, basis.hessians)


def sample(basis: KLBasis, seed: int, draw: int = 0) -> GRFSample:
    """Draw number ``draw`` of the stream keyed by ``seed``."""
    xi = mcstats.standard_normals(seed, 1, basis.size, start=draw)[0]
    return GRFSample(basis, xi, field_values(basis, xi), int(seed), int(draw))


def sample_batch(basis: KLBasis, seed: int, draws: int, start: int = 0) -> tuple[np.ndarray, np.ndarray]:
    xi = mcstats.standard_normals(seed, draws, basis.size, start=start)
    return xi, field_values(basis, xi)


def project_xi(basis: KLBasis, field_values_at_nodes) -> np.ndarray:
    """Recover the normals: ``xi_I = Z_I^-1/2 sum_j w_j T(x_j) f_I(x_j)``."""
    z = basis.eigenvalues
    if np.any(z <= EIGENVALUE_FLOOR * np.max(z)):
        raise ValueError("basis has eigenvalues below the floor; projection is ill-conditioned")
    t = np.asarray(field_values_at_nodes, dtype=float)
    return (t * basis.domain.weights) @ basis.eigenfunctions.T / basis.sqrt_eigenvalues


def moment_p(basis: KLBasis, node: int, p: int) -> float:
    """Exact Gaussian moment ``E|T(x)|^p = (p-1)!! sigma(x)^p`` for even ``p``."""
    if p < 2 or p % 2:
        raise ValueError(f"p must be an even integer >= 2, got {p}")
    sigma2 = float(basis.variance[node])
    return float(factorial2(p - 1, exact=True)) * sigma2 ** (p // 2)


def paper_convention_moment(basis: KLBasis, node: int, p: int) -> float:
    """``sum_I Z_I^(p/2) f_I^p (p/2 - 1)!!``, reported only for comparison."""
    if p < 2 or p % 2:
        raise ValueError(f"p must be an even integer >= 2, got {p}")
    f = basis.eigenfunctions[:, node]
    dfac = float(factorial2(p // 2 - 1, exact=True)) if p > 2 else 1.0
    return float(np.sum(basis.eigenvalues ** (p / 2) * f**p) * dfac)


def sobolev_norm_expectation(basis: KLBasis, s: int) -> float:
    """``E ||T||^2_{H^s}`` from the eigenpairs, ``s`` in {1, 2}."""
    if s not in (1, 2):
        raise ValueError(f"Sobolev order must be 1 or 2, got {s}")
    z = basis.eigenvalues
    ints = basis_integrals(basis)
    total = float(np.sum(z * ints["H"]) + np.sum(z * ints["H_grad"]))
    if s == 2:
        h = basis.hessians
        total += float(np.sum(z * integrate(basis.domain, np.sum(h * h, axis=(-1, -2)))))
    return total


def variance_integral(basis: KLBasis) -> dict:
    """``int sigma^2 dV`` by quadrature next to ``sum_I Z_I``."""
    quad = integrate(basis.domain, basis.variance)
    total = float(np.sum(basis.eigenvalues))
    rel = abs(quad - total) / abs(total)
    return {"quadrature": quad, "eigenvalue_sum": total, "relative_difference": rel,
            "consistent": bool(rel <= VARIANCE_RTOL)}


def gradient_second_moment(basis: KLBasis) -> np.ndarray:
    """``E|grad T(x_j)|^2 = sum_I Z_I |grad f_I(x_j)|^2`` per node."""
    return basis.eigenvalues @ np.sum(basis.gradients**2, axis=-1)


def norm_statistics(basis: KLBasis, xi: np.ndarray, order: int = 1) -> np.ndarray:
    """Per-draw ``[||T||^2_L2, ||grad T||^2_L2(, ||Hess T||^2_L2)]`` by quadrature."""
    d = basis.domain
    cols = [integrate(d, field_values(basis, xi) ** 2),
            integrate(d, np.sum(field_gradient(basis, xi) ** 2, axis=-1))]
    if order == 2:
        cols.append(integrate(d, np.sum(field_hessian(basis, xi) ** 2, axis=(-1, -2))))
    return np.stack(cols, axis=-1)


def _check(name, estimate, expected, tolerance, passed, **extra) -> dict:
    out = {"name": name, "passed": bool(passed), "estimate": estimate,
           "expected": expected, "tolerance": tolerance}
    out.update(extra)
    return out


def _pick_pairs(n: int, count: int, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(2**31,))))
    return rng.integers(0, n, size=(count, 2))


def verify(basis: KLBasis, draws: int = 100_000, seed: int = 0, workers: int | None = None,
           n_pairs: int = 20, moment_draws: int | None = None, sobolev_draws: int | None = None,
           z_tol: float = 4.0, sobolev_z_tol: float = 3.0) -> dict:
    """Monte Carlo and quadrature checks of the scalar-field identities.

    Returns a JSON-ready report with one entry per check.
    """
    dom = basis.domain
    n, N = dom.node_count, basis.size
    pairs = _pick_pairs(n, n_pairs, seed)
    iu = np.triu_indices(N)
    checks = []

    def first_second(xi):
        t = field_values(basis, xi)
        prods = t[:, pairs[:, 0]] * t[:, pairs[:, 1]]
        xp = project_xi(basis, t)
        outer = (xp[:, :, None] * xp[:, None, :])[:, iu[0], iu[1]]
        return np.concatenate([t, prods, outer], axis=1)

    est = mcstats.run(first_second, seed, draws, N, workers)
    mean, se = est.mean, est.standard_error
    z_mean = mcstats.z_score(mean[:n], 0.0, se[:n])
    checks.append(_check("field_mean_zero", float(np.max(np.abs(mean[:n]))), 0.0, f"{z_tol} SE",
                         np.all(z_mean <= z_tol), max_z=float(np.max(z_mean))))
    mercer = np.array([basis.mercer([j], [k])[0, 0] for j, k in pairs])
    z_cov = mcstats.z_score(mean[n:n + n_pairs], mercer, se[n:n + n_pairs])
    checks.append(_check("covariance_matches_mercer", mean[n:n + n_pairs].tolist(), mercer.tolist(),
                         f"{z_tol} SE", np.all(z_cov <= z_tol), max_z=float(np.max(z_cov)),
                         pairs=pairs.tolist()))
    eye = np.eye(N)[iu]
    z_xi = mcstats.z_score(mean[n + n_pairs:], eye, se[n + n_pairs:])
    checks.append(_check("projected_xi_covariance_identity", float(np.max(np.abs(mean[n + n_pairs:] - eye))),
                         0.0, f"{z_tol} SE", np.all(z_xi <= z_tol), max_z=float(np.max(z_xi))))

    draw0 = sample(basis, seed)
    err = float(np.max(np.abs(project_xi(basis, draw0.values) - draw0.xi)))
    checks.append(_check("projection_round_trip", err, 0.0, 1e-8, err <= 1e-8))

    # Moment arbitration at the node whose variance is closest to the box mean.
    node = int(np.argmin(np.abs(basis.variance - np.mean(basis.variance))))
    sigma = np.sqrt(basis.variance[node])
    fn = basis.eigenfunctions[:, node] * basis.sqrt_eigenvalues / sigma
    mom = mcstats.run(lambda xi: np.stack([(xi @ fn) ** 2, (xi @ fn) ** 4], axis=1),
                      seed + 1, moment_draws or 10 * draws, N, workers)
    m4 = float(mom.mean[1])
    checks.append(_check("fourth_moment_convention", m4, 3.0, [2.9, 3.1], 2.9 <= m4 <= 3.1,
                         node=node, standard_error=float(mom.standard_error[1]),
                         paper_convention_value=1.0,
                         note="E[Z^4] = (p-1)!! = 3 for a unit normal; (p/2-1)!! would give 1"))

    ints = basis_integrals(basis)
    h_a = float(np.max(np.abs(ints["H_a"])))
    checks.append(_check("f_grad_f_integral_zero", h_a, 0.0, 1e-6, h_a <= 1e-6))
    checks.append(_check("gradient_energy_positive", float(np.min(ints["H_grad"])), ">0", 0.0,
                         np.all(ints["H_grad"] > 0)))
    var = variance_integral(basis)
    checks.append(_check("variance_integral", var["quadrature"], var["eigenvalue_sum"],
                         VARIANCE_RTOL, var["consistent"]))

    def norms(xi):
        v = norm_statistics(basis, xi)
        return np.concatenate([v, v.sum(axis=1, keepdims=True)], axis=1)

    sob = mcstats.run(norms, seed + 2, sobolev_draws or max(draws // 10, 1000), N, workers)
    l2_expected = float(np.sum(basis.eigenvalues * ints["H"]))
    z_l2 = float(mcstats.z_score(sob.mean[0], l2_expected, sob.standard_error[0]))
    checks.append(_check("l2_norm_expectation", float(sob.mean[0]), l2_expected, f"{sobolev_z_tol} SE",
                         z_l2 <= sobolev_z_tol, z=z_l2,
                         eigenvalue_sum_times_volume=l2_expected * dom.volume))
    h1_expected = sobolev_norm_expectation(basis, 1)
    z_h1 = float(mcstats.z_score(sob.mean[2], h1_expected, sob.standard_error[2]))
    checks.append(_check("h1_norm_expectation", float(sob.mean[2]), h1_expected, f"{sobolev_z_tol} SE",
                         z_h1 <= sobolev_z_tol, z=z_h1, standard_error=float(sob.standard_error[2])))

    return {
        "kind": "grf-verify",
        "basis": basis.describe(),
        "draws": draws,
        "seed": seed,
        "checks": checks,
        "passed": all(c["passed"] for c in checks),
    }
