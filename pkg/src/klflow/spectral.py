"""Karhunen-Loeve eigenbases on a box: Nystrom and analytic Laplace-Dirichlet.

Eigenfunctions are held as values at the quadrature nodes, one row per mode,
normalised so that ``sum_j w_j f_I(x_j) f_J(x_j) = delta_IJ``. Modes are
indexed from zero.
"""

from __future__ import annotations

import io
import itertools
import json
import warnings
from functools import cached_property
from pathlib import Path

import numpy as np

from . import kernels
from .geometry import BoxDomain, integrate
from .kernels import Kernel

FORMAT_VERSION = 1
EIGENVALUE_FLOOR = 1e-12
SYMMETRY_TOL = 1e-12


class NumericalError(RuntimeError):
    """Internal numerical failure (asymmetric operator, nonconvergence)."""


class TruncationWarning(UserWarning):
    pass


class KLBasis:
    """Truncated eigenpairs ``(Z_I, f_I)`` on the nodes of a domain.

    ``kind`` is ``"nystrom"`` (eigenvalues descending) or
    ``"dirichlet-analytic"`` (eigenvalues ascending). ``modes`` holds the
    integer wave numbers of each Dirichlet mode and is ``None`` otherwise.
    """

    def __init__(self, domain: BoxDomain, kernel: Kernel | None, eigenvalues, eigenfunctions,
                 kind: str, requested: int | None = None, modes=None):
        self.domain = domain
        self.kernel = kernel
        self.eigenvalues = np.asarray(eigenvalues, dtype=float)
        self.eigenfunctions = np.asarray(eigenfunctions, dtype=float)
        self.kind = kind
        self.requested = int(requested if requested is not None else self.eigenvalues.size)
        self.modes = None if modes is None else np.asarray(modes, dtype=np.int64)
        if self.eigenfunctions.shape != (self.eigenvalues.size, domain.node_count):
            raise ValueError("eigenfunctions must have shape (N, node_count)")
        for arr in (self.eigenvalues, self.eigenfunctions):
            arr.setflags(write=False)

    @property
    def size(self) -> int:
        return self.eigenvalues.size

    @property
    def truncated(self) -> bool:
        """True when fewer modes than requested survived the eigenvalue floor."""
        return self.size < self.requested

    @property
    def analytic(self) -> bool:
        return self.kind == "dirichlet-analytic"

    @cached_property
    def sqrt_eigenvalues(self) -> np.ndarray:
        return np.sqrt(self.eigenvalues)

    @cached_property
    def gradients(self) -> np.ndarray:
        """Eigenfunction gradients at the nodes, shape ``(N, node_count, dim)``."""
        if self.analytic:
            g = dirichlet_derivatives(self.domain, self.modes, self.domain.nodes)[1]
        else:
            g = _grid_gradient(self.domain, self.eigenfunctions)
        g.setflags(write=False)
        return g

    @cached_property
    def hessians(self) -> np.ndarray:
        """Second derivatives, shape ``(N, node_count, dim, dim)``.

        Exact for the Dirichlet basis; repeated finite differences (lower
        accuracy) for Nystrom bases.
        """
        if self.analytic:
            h = dirichlet_derivatives(self.domain, self.modes, self.domain.nodes)[2]
        else:
            d = self.domain.dim
            cols = [_grid_gradient(self.domain, self.gradients[..., a]) for a in range(d)]
            h = np.stack(cols, axis=-2)
            h = 0.5 * (h + np.swapaxes(h, -1, -2))
        h.setflags(write=False)
        return h

    @cached_property
    def variance(self) -> np.ndarray:
        """Pointwise variance ``sigma^2(x_j) = sum_I Z_I f_I(x_j)^2``."""
        return self.eigenvalues @ self.eigenfunctions**2

    def mercer(self, rows=None, cols=None) -> np.ndarray:
        """Reconstructed kernel ``sum_I Z_I f_I(x_j) f_I(x_k)`` on node subsets."""
        fr = self.eigenfunctions if rows is None else self.eigenfunctions[:, rows]
        fc = self.eigenfunctions if cols is None else self.eigenfunctions[:, cols]
        return (fr * self.eigenvalues[:, None]).T @ fc

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "domain": self.domain.describe(),
            "kernel": None if self.kernel is None else self.kernel.describe(),
            "requested": self.requested,
            "N": self.size,
            "truncated": self.truncated,
        }

    def __repr__(self) -> str:
        return f"KLBasis(kind={self.kind!r}, N={self.size}, domain={self.domain!r})"


def _grid_gradient(domain: BoxDomain, values: np.ndarray) -> np.ndarray:
    """Second-order finite-difference gradient of node values along the grid axes."""
    lead = values.shape[:-1]
    grid = domain.to_grid(values)
    axes = tuple(range(len(lead), len(lead) + domain.dim))
    parts = np.gradient(grid, *domain.axes, axis=axes, edge_order=2)
    if domain.dim == 1:
        parts = [parts]
    return np.stack([p.reshape(lead + (domain.node_count,)) for p in parts], axis=-1)


def _axis_parity_bases(n: int) -> tuple[np.ndarray, np.ndarray]:
    even, odd = [], []
    for i in range(n // 2):
        v = np.zeros(n)
        v[i] = v[n - 1 - i] = np.sqrt(0.5)
        even.append(v)
        v = np.zeros(n)
        v[i], v[n - 1 - i] = np.sqrt(0.5), -np.sqrt(0.5)
        odd.append(v)
    if n % 2:
        v = np.zeros(n)
        v[n // 2] = 1.0
        even.append(v)
    return np.array(even).T, np.array(odd).T


def _parity_sectors(domain: BoxDomain) -> list[np.ndarray]:
    """Orthonormal bases of the reflection-parity sectors of the node space."""
    per_axis = [_axis_parity_bases(domain.nodes_per_axis) for _ in range(domain.dim)]
    sectors = []
    for signs in itertools.product((0, 1), repeat=domain.dim):
        blocks = [per_axis[k][s] for k, s in enumerate(signs)]
        if any(b.shape[1] == 0 for b in blocks):
            continue
        q = blocks[0]
        for b in blocks[1:]:
            q = np.kron(q, b)
        sectors.append(q)
    return sectors


def _fix_signs(f: np.ndarray) -> np.ndarray:
    f = f.copy()
    for i, row in enumerate(f):
        total = row.sum()
        scale = np.abs(row).sum()
        if abs(total) > 1e-10 * scale:
            flip = total < 0
        else:
            nz = np.flatnonzero(np.abs(row) > 1e-12 * np.abs(row).max())
            flip = row[nz[0]] < 0
        if flip:
            f[i] = -row
    return f


def solve_nystrom(domain: BoxDomain, kernel: Kernel, N: int, use_symmetry: bool = True) -> KLBasis:
    """Nystrom solution of the Fredholm eigenproblem ``int K f dV = Z f``.

    Builds ``M = D^1/2 K D^1/2`` with ``D`` the quadrature weights, takes its
    leading eigenpairs, and maps eigenvectors back with ``D^-1/2``. For
    stationary kernels the grid's mirror symmetry is used to split ``M`` into
    even/odd blocks, which keeps every eigenfunction of definite parity even
    where the spectrum is numerically degenerate.

    Eigenvalues at or below ``1e-12 * Z_1`` are dropped; if fewer than ``N``
    remain the basis is returned shorter and a ``TruncationWarning`` is issued.
    """
    if N < 1 or N > domain.node_count:
        raise ValueError(f"truncation N must lie in [1, {domain.node_count}], got {N}")
    kmat = kernels.matrix(kernel, domain.nodes)
    asym = np.max(np.abs(kmat - kmat.T))
    if asym > SYMMETRY_TOL * max(1.0, np.max(np.abs(kmat))):
        raise NumericalError(f"kernel matrix is not symmetric (max deviation {asym:.3e})")
    s = np.sqrt(domain.weights)
    m = s[:, None] * kmat * s[None, :]
    m = 0.5 * (m + m.T)

    if use_symmetry and kernel.stationary:
        vals, vecs = [], []
        for q in _parity_sectors(domain):
            z, y = np.linalg.eigh(q.T @ m @ q)
            vals.append(z)
            vecs.append(q @ y)
        z = np.concatenate(vals)
        v = np.concatenate(vecs, axis=1)
    else:
        z, v = np.linalg.eigh(m)
    if not np.all(np.isfinite(z)):
        raise NumericalError("eigensolver returned non-finite eigenvalues")

    order = np.argsort(-z, kind="stable")
    z, v = z[order], v[:, order]
    keep = z > EIGENVALUE_FLOOR * z[0]
    n_keep = min(N, int(np.count_nonzero(keep)))
    if n_keep < N:
        warnings.warn(f"only {n_keep} of {N} requested eigenvalues exceed the floor "
                      f"{EIGENVALUE_FLOOR:g} * Z_1; basis truncated", TruncationWarning,
                      stacklevel=2)
    f = (v[:, :n_keep] / s[:, None]).T
    return KLBasis(domain, kernel, z[:n_keep], _fix_signs(f), "nystrom", requested=N)


def dirichlet_modes(side_lengths, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Wave-number tuples and eigenvalues of the first ``N`` Dirichlet modes."""
    sides = np.atleast_1d(np.asarray(side_lengths, dtype=float))
    dim = sides.size
    n_max = max(2, int(np.ceil(N ** (1.0 / dim))))
    while True:
        grids = np.meshgrid(*([np.arange(1, n_max + 1)] * dim), indexing="ij")
        cand = np.stack([g.ravel() for g in grids], axis=-1)
        lam = np.sum((cand * np.pi / sides) ** 2, axis=1)
        order = np.lexsort(tuple(cand[:, k] for k in reversed(range(dim))) + (lam,))[:N]
        # Any mode outside the candidate cube has eigenvalue above this bound.
        bound = np.min(((n_max + 1) * np.pi / sides) ** 2)
        if order.size == N and lam[order[-1]] < bound:
            return cand[order], lam[order]
        n_max *= 2


def dirichlet_derivatives(domain_or_sides, modes, points):
    """Values, gradients and Hessians of Dirichlet eigenfunctions at points.

    Returns arrays of shape ``(N, P)``, ``(N, P, d)`` and ``(N, P, d, d)``.
    """
    sides = np.asarray(getattr(domain_or_sides, "side_lengths", domain_or_sides), dtype=float)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    modes = np.atleast_2d(modes)
    k = modes * np.pi / sides                                # (N, d)
    phase = k[:, None, :] * pts[None, :, :]                 # (N, P, d)
    amp = np.sqrt(2.0 / sides)
    s = amp * np.sin(phase)
    c = amp * k[:, None, :] * np.cos(phase)
    s2 = -(k[:, None, :] ** 2) * s
    dim = sides.size
    val = np.prod(s, axis=-1)
    grad = np.empty(s.shape)
    hess = np.empty(s.shape + (dim,))
    for a in range(dim):
        for b in range(dim):
            factors = []
            for e in range(dim):
                if e == a == b:
                    factors.append(s2[..., e])
                elif e == a or e == b:
                    factors.append(c[..., e])
                else:
                    factors.append(s[..., e])
            hess[..., a, b] = np.prod(factors, axis=0)
        grad[..., a] = np.prod([c[..., e] if e == a else s[..., e] for e in range(dim)], axis=0)
    return val, grad, hess


def dirichlet_basis(domain: BoxDomain, N: int) -> KLBasis:
    """Analytic eigenpairs of ``-Laplace`` with zero boundary values, ascending."""
    if N < 1:
        raise ValueError(f"truncation N must be >= 1, got {N}")
    modes, lam = dirichlet_modes(domain.side_lengths, N)
    f = dirichlet_derivatives(domain, modes, domain.nodes)[0]
    return KLBasis(domain, None, lam, f, "dirichlet-analytic", requested=N, modes=modes)


def dirichlet_mercer(kernel: Kernel, x, y):
    """``sum_I Z_I f_I(x) f_I(y)`` over the first ``kernel.n_terms`` Dirichlet modes."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dim = len(kernel.side_lengths)
    if x.ndim == 0:
        x = x[None]
    if y.ndim == 0:
        y = y[None]
    shape = np.broadcast_shapes(x.shape, y.shape)[:-1]
    xb = np.broadcast_to(x, shape + (dim,)).reshape(-1, dim)
    yb = np.broadcast_to(y, shape + (dim,)).reshape(-1, dim)
    modes, lam = dirichlet_modes(kernel.side_lengths, kernel.n_terms)
    fx = dirichlet_derivatives(kernel.side_lengths, modes, xb)[0]
    fy = dirichlet_derivatives(kernel.side_lengths, modes, yb)[0]
    out = (kernel.norm * lam @ (fx * fy)).reshape(shape)
    return float(out) if out.ndim == 0 else out


def eigenfunction_gradient(basis: KLBasis, I: int) -> np.ndarray:
    """Gradient of mode ``I`` (zero-based) at every node, shape ``(node_count, dim)``."""
    if not 0 <= I < basis.size:
        raise IndexError(f"mode index {I} out of range [0, {basis.size})")
    return basis.gradients[I]


def gram_matrix(basis: KLBasis) -> np.ndarray:
    f = basis.eigenfunctions
    return (f * basis.domain.weights) @ f.T


def fredholm_residual(basis: KLBasis) -> np.ndarray:
    """Per-mode ``max_j |int K(x_j, y) f_I(y) dV - Z_I f_I(x_j)|``."""
    if basis.kernel is None:
        raise ValueError("a kernel is required to evaluate the Fredholm residual")
    kmat = kernels.matrix(basis.kernel, basis.domain.nodes)
    applied = (basis.eigenfunctions * basis.domain.weights) @ kmat
    return np.max(np.abs(applied - basis.eigenvalues[:, None] * basis.eigenfunctions), axis=1)


def basis_integrals(basis: KLBasis) -> dict:
    """Mode integrals ``H``, ``H_a`` and ``H_grad`` by quadrature.

    ``H[I] = int f_I^2``, ``H_a[I, a] = int f_I d_a f_I`` and
    ``H_grad[I] = int |grad f_I|^2``.
    """
    d = basis.domain
    f, g = basis.eigenfunctions, basis.gradients
    return {
        "H": integrate(d, f * f),
        "H_a": np.einsum("in,ina->ia", f * d.weights, g),
        "H_grad": integrate(d, np.sum(g * g, axis=-1)),
    }


def kernel_trace(kernel: Kernel, domain: BoxDomain) -> float:
    """``int K(x, x) dV``; equals ``norm * vol`` for stationary kernels."""
    if kernel.stationary:
        return kernel.norm * domain.volume
    diag = kernels.eval(kernel, domain.nodes, domain.nodes)
    return integrate(domain, diag)


def mercer_diagnostics(basis: KLBasis, block: int = 2048) -> dict:
    """Trace error, pointwise Mercer error and the L2 truncation tail."""
    if basis.kernel is None:
        raise ValueError("Mercer diagnostics need the kernel the basis was built from")
    total = kernel_trace(basis.kernel, basis.domain)
    zsum = float(np.sum(basis.eigenvalues))
    nodes = basis.domain.nodes
    worst = 0.0
    for start in range(0, basis.domain.node_count, block):
        rows = slice(start, min(start + block, basis.domain.node_count))
        exact = kernels.matrix(basis.kernel, nodes[rows], nodes)
        worst = max(worst, float(np.max(np.abs(basis.mercer(rows=rows) - exact))))
    return {
        "trace_error": abs(zsum - total),
        "max_pointwise_error": worst,
        "kl_l2_tail": total - zsum,
    }


def quality_report(basis: KLBasis) -> dict:
    """JSON-ready summary of orthonormality, residual, trace and mode integrals."""
    gram = gram_matrix(basis)
    ints = basis_integrals(basis)
    out = {
        "basis": basis.describe(),
        "eigenvalues_head": basis.eigenvalues[:10].tolist(),
        "eigenvalue_sum": float(np.sum(basis.eigenvalues)),
        "orthonormality_error": float(np.max(np.abs(gram - np.eye(basis.size)))),
        "max_abs_H_a": float(np.max(np.abs(ints["H_a"]))),
        "min_H_grad": float(np.min(ints["H_grad"])),
    }
    if basis.kernel is not None:
        out["fredholm_residual_rel"] = float(np.max(fredholm_residual(basis)) / np.max(basis.eigenvalues))
        out.update(mercer_diagnostics(basis))
    else:
        out["max_abs_H_grad_minus_Z_rel"] = float(
            np.max(np.abs(ints["H_grad"] - basis.eigenvalues) / basis.eigenvalues))
    return out


def save_basis(basis: KLBasis, path) -> None:
    """Write a basis to an ``npz`` container (bit-exact round trip)."""
    meta = basis.describe()
    meta["format_version"] = FORMAT_VERSION
    payload = {
        "meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
        "eigenvalues": basis.eigenvalues,
        "eigenfunctions": basis.eigenfunctions,
        "weights": basis.domain.weights,
    }
    if basis.modes is not None:
        payload["modes"] = basis.modes
    buf = io.BytesIO()
    np.savez(buf, **payload)
    Path(path).write_bytes(buf.getvalue())


def load_basis(path) -> KLBasis:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported basis format version {meta.get('format_version')!r}")
        dom = meta["domain"]
        domain = BoxDomain(dom["dim"], dom["side_lengths"], dom["nodes_per_axis"], dom["rule"])
        if not np.array_equal(domain.weights, data["weights"]):
            raise ValueError("stored quadrature weights do not match the rebuilt domain")
        kernel = None if meta["kernel"] is None else Kernel.from_description(meta["kernel"])
        modes = data["modes"] if "modes" in data.files else None
        return KLBasis(domain, kernel, data["eigenvalues"], data["eigenfunctions"],
                       meta["kind"], requested=meta["requested"], modes=modes)
