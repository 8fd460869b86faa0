"""Covariance kernels and their derivatives.

Points are arrays whose last axis is the spatial dimension; all evaluators
broadcast over leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

VARIANTS = ("gaussian", "rq", "dirichlet")


class NonIntegrableDensityError(ValueError):
    """Raised when a spectral density does not produce a convergent kernel."""


@dataclass(frozen=True)
class Kernel:
    """Covariance kernel ``K(x, y; lambda)``.

    ``variant`` is one of ``"gaussian"``, ``"rq"`` (rational quadratic) or
    ``"dirichlet"``. The Dirichlet variant is the Mercer sum of the first
    ``n_terms`` Laplace-Dirichlet eigenpairs on a box with ``side_lengths``.
    """

    variant: str
    lam: float = 1.0
    alpha: float = 1.0
    n_terms: int = 1
    norm: float = 1.0
    side_lengths: tuple = field(default=())

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown kernel {self.variant!r}; expected one of {VARIANTS}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.n_terms < 1:
            raise ValueError(f"truncation must be >= 1, got {self.n_terms}")
        if self.variant == "dirichlet" and not self.side_lengths:
            raise ValueError("dirichlet kernel needs the box side lengths")

    @property
    def stationary(self) -> bool:
        return self.variant in ("gaussian", "rq")

    def describe(self) -> dict:
        out = {"type": self.variant, "lambda": self.lam, "norm": self.norm}
        if self.variant == "rq":
            out["alpha"] = self.alpha
        if self.variant == "dirichlet":
            out["n_terms"] = self.n_terms
            out["side_lengths"] = list(self.side_lengths)
        return out

    @classmethod
    def from_description(cls, desc: dict) -> "Kernel":
        return cls(variant=desc["type"], lam=float(desc.get("lambda", 1.0)),
                   alpha=float(desc.get("alpha", 1.0)),
                   n_terms=int(desc.get("n_terms", 1)),
                   norm=float(desc.get("norm", 1.0)),
                   side_lengths=tuple(desc.get("side_lengths", ())))


def gaussian(lam: float, norm: float = 1.0) -> Kernel:
    return Kernel("gaussian", lam=lam, norm=norm)


def rational_quadratic(lam: float, alpha: float, norm: float = 1.0) -> Kernel:
    return Kernel("rq", lam=lam, alpha=alpha, norm=norm)


def _split(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 0:
        x = x[None]
    if y.ndim == 0:
        y = y[None]
    r = x - y
    return r, np.sum(r * r, axis=-1)


def eval(kernel: Kernel, x, y):
    """Kernel value ``K(x, y)``."""
    if kernel.variant == "dirichlet":
        from .spectral import dirichlet_mercer
        return dirichlet_mercer(kernel, x, y)
    _, r2 = _split(x, y)
    if kernel.variant == "gaussian":
        out = kernel.norm * np.exp(-r2 / kernel.lam**2)
    else:
        out = kernel.norm * (1.0 + r2 / (2.0 * kernel.alpha * kernel.lam**2)) ** (-kernel.alpha)
    return float(out) if np.ndim(out) == 0 else out


def matrix(kernel: Kernel, xs, ys=None) -> np.ndarray:
    """Dense matrix ``K(xs[i], ys[j])``."""
    xs = np.asarray(xs, dtype=float)
    ys = xs if ys is None else np.asarray(ys, dtype=float)
    return np.asarray(eval(kernel, xs[:, None, :], ys[None, :, :]))


def _require_stationary(kernel: Kernel):
    if not kernel.stationary:
        raise ValueError("derivatives are only available for stationary kernels; "
                         "differentiate the Dirichlet eigenbasis directly")


def grad_x(kernel: Kernel, x, y) -> np.ndarray:
    """Gradient of ``K`` with respect to its first argument."""
    _require_stationary(kernel)
    r, r2 = _split(x, y)
    lam2 = kernel.lam**2
    if kernel.variant == "gaussian":
        scale = -2.0 / lam2 * kernel.norm * np.exp(-r2 / lam2)
    else:
        g = 1.0 + r2 / (2.0 * kernel.alpha * lam2)
        scale = -kernel.norm / lam2 * g ** (-kernel.alpha - 1.0)
    return np.asarray(scale)[..., None] * r


def grad_y(kernel: Kernel, x, y) -> np.ndarray:
    return -grad_x(kernel, x, y)


def mixed_grad(kernel: Kernel, x, y) -> np.ndarray:
    """Matrix of mixed second derivatives ``d^2 K / dx_a dy_b``."""
    _require_stationary(kernel)
    r, r2 = _split(x, y)
    lam2 = kernel.lam**2
    eye = np.eye(r.shape[-1])
    outer = r[..., :, None] * r[..., None, :]
    if kernel.variant == "gaussian":
        k = kernel.norm * np.exp(-r2 / lam2)[..., None, None]
        return (2.0 / lam2 * eye - 4.0 / lam2**2 * outer) * k
    a = kernel.alpha
    g = (1.0 + r2 / (2.0 * a * lam2))[..., None, None]
    return kernel.norm * (eye / lam2 * g ** (-a - 1.0)
                          - (a + 1.0) / (a * lam2**2) * outer * g ** (-a - 2.0))


def gaussian_spectral_density(lam: float) -> Callable[[np.ndarray], np.ndarray]:
    """One-dimensional spectral density whose cosine transform is ``exp(-r^2/lam^2)``."""
    c = lam / (2.0 * np.sqrt(np.pi))
    return lambda xi: c * np.exp(-0.25 * lam**2 * np.asarray(xi) ** 2)


def _cosine_transform(density, cutoff, r, panels, order):
    t, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, cutoff, panels + 1)
    half = 0.5 * np.diff(edges)
    xi = (edges[:-1, None] + half[:, None] * (t[None, :] + 1.0)).ravel()
    wt = (half[:, None] * w[None, :]).ravel()
    s = np.asarray(density(xi), dtype=float)
    if not np.all(np.isfinite(s)):
        raise NonIntegrableDensityError("spectral density is not finite on the wavenumber range")
    r = np.asarray(r, dtype=float)
    # Density is even in the wavenumber, so integrate over [0, cutoff] twice.
    return 2.0 * (np.cos(np.outer(r.ravel(), xi)) @ (wt * s)).reshape(r.shape)


def kernel_from_spectral_density(density: Callable, lam: float = 1.0, cutoff: float | None = None,
                                 normalize: bool = True, rtol: float = 1e-10,
                                 max_cutoff: float | None = None, panel_width: float | None = None,
                                 order: int = 16) -> Callable:
    """Kernel obtained as the cosine transform of a 1D spectral density.

    With ``cutoff`` given the density is truncated to ``[-cutoff, cutoff]``
    (a band-limited white noise spike is fine). Without it the cutoff is
    doubled from ``8 / lam`` until the value at zero separation converges;
    if that fails before ``max_cutoff`` the density is rejected.
    """
    panel_width = panel_width or 0.25 / lam

    def transform(c, r):
        panels = max(1, int(np.ceil(c / panel_width)))
        return _cosine_transform(density, c, r, panels, order)

    if cutoff is None:
        c = 8.0 / lam
        limit = max_cutoff or 1024.0 / lam
        prev = float(transform(c, 0.0))
        while True:
            c *= 2.0
            cur = float(transform(c, 0.0))
            if abs(cur - prev) <= rtol * abs(cur):
                break
            if c >= limit:
                raise NonIntegrableDensityError(
                    f"cosine transform did not converge up to wavenumber {c:g}")
            prev = cur
        cutoff = c
    elif not cutoff > 0:
        raise ValueError("cutoff must be positive")

    scale = 1.0
    if normalize:
        k0 = float(transform(cutoff, 0.0))
        if not np.isfinite(k0) or k0 <= 0:
            raise NonIntegrableDensityError("kernel value at zero separation is not positive")
        scale = 1.0 / k0

    def k_hat(x, y):
        r = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        out = scale * transform(cutoff, np.abs(r))
        return float(out) if np.ndim(out) == 0 else out

    k_hat.cutoff = cutoff
    return k_hat
