"""Harmonic infill of unknown image regions via the discrete Laplace equation.

Unknown pixels are solved so the 5-point Laplacian vanishes, with known
pixels supplying Dirichlet data and the frame border acting as a mirror
(Neumann) boundary, which keeps the system symmetric positive definite.
Unknown components whose Dirichlet data is a single constant are filled
with that constant outright (the exact harmonic solution, and bit-exact
for untruncated slices whose missing region is uniform background).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import cg as _sparse_cg

from .errors import NumericError
from .extent import ExtensionResult
from .fovsim import WINDOW_CEIL_HU, WINDOW_FLOOR_HU
from .raster import ImageGrid, MaskGrid

__all__ = [
    "SOLVER_METHODS",
    "SolverConfig",
    "InpaintResult",
    "harmonic_inpaint",
    "complete_sample",
    "complete_with_diagnostics",
]

SOLVER_METHODS = ("conjugate-gradient", "gauss-seidel")

_STRUCT4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_SHIFTS = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass(frozen=True)
class SolverConfig:
    """Iterative-solver knobs.

    max_iters defaults to 10x the unknown pixel count, capped by
    max_iters_cap; tol is the relative residual target.
    """

    tol: float = 1e-6
    max_iters: int | None = None
    max_iters_cap: int = 200_000
    method: str = "conjugate-gradient"

    def __post_init__(self) -> None:
        if not (self.tol > 0):
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iters is not None and self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.max_iters_cap < 1:
            raise ValueError(f"max_iters_cap must be >= 1, got {self.max_iters_cap}")
        if self.method not in SOLVER_METHODS:
            raise ValueError(f"method must be one of {SOLVER_METHODS}, got {self.method!r}")

    def effective_max_iters(self, n_unknown: int) -> int:
        if self.max_iters is not None:
            return self.max_iters
        return max(1, min(10 * n_unknown, self.max_iters_cap))


class InpaintResult(NamedTuple):
    image: ImageGrid
    residual: float
    iters: int
    flags: tuple[str, ...] = ()


def _assemble(values: np.ndarray, unknown: np.ndarray) -> tuple[sparse.csr_matrix, np.ndarray]:
    """Build A u = b for the unknown pixels (5-point Laplacian, mirror frame)."""
    h, w = values.shape
    ys, xs = np.nonzero(unknown)
    n = ys.size
    index = -np.ones((h, w), dtype=np.intp)
    index[ys, xs] = np.arange(n)

    diag = np.zeros(n, dtype=np.float64)
    b = np.zeros(n, dtype=np.float64)
    off_rows: list[np.ndarray] = []
    off_cols: list[np.ndarray] = []
    for dy, dx in _SHIFTS:
        ny = ys + dy
        nx = xs + dx
        in_frame = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        diag += in_frame  # out-of-frame mirror neighbors cancel out
        rows_if = np.flatnonzero(in_frame)
        nyi = ny[rows_if]
        nxi = nx[rows_if]
        nbr_unknown = unknown[nyi, nxi]
        off_rows.append(rows_if[nbr_unknown])
        off_cols.append(index[nyi[nbr_unknown], nxi[nbr_unknown]])
        known_rows = rows_if[~nbr_unknown]
        np.add.at(b, known_rows, values[nyi[~nbr_unknown], nxi[~nbr_unknown]])

    rows = np.concatenate(off_rows + [np.arange(n)])
    cols = np.concatenate(off_cols + [np.arange(n)])
    data = np.concatenate([-np.ones(rows.size - n), diag])
    a_mat = sparse.csr_matrix((data, (rows, cols)), shape=(n, n))
    return a_mat, b


def _dirichlet_contacts(
    values: np.ndarray, unknown: np.ndarray, labels: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """(component label, known neighbor value) pairs along the unknown rim."""
    h, w = values.shape
    lab_list: list[np.ndarray] = []
    val_list: list[np.ndarray] = []
    ys, xs = np.nonzero(unknown)
    for dy, dx in _SHIFTS:
        ny = ys + dy
        nx = xs + dx
        ok = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        oky, okx = ny[ok], nx[ok]
        known_nbr = ~unknown[oky, okx]
        lab_list.append(labels[ys[ok][known_nbr], xs[ok][known_nbr]])
        val_list.append(values[oky[known_nbr], okx[known_nbr]])
    return np.concatenate(lab_list), np.concatenate(val_list)


def _gauss_seidel(
    values: np.ndarray,
    solve_mask: np.ndarray,
    a_mat: sparse.csr_matrix,
    b: np.ndarray,
    x0_fill: float,
    tol: float,
    max_iters: int,
) -> tuple[np.ndarray, float, int]:
    """Red-black sweeps on the full grid; returns (solution, residual, sweeps)."""
    h, w = values.shape
    u = values.copy()
    u[solve_mask] = x0_fill
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    colors = [(solve_mask & (((yy + xx) % 2) == c)) for c in (0, 1)]
    deg = np.full((h, w), 4.0)
    deg[0, :] -= 1.0
    deg[-1, :] -= 1.0
    deg[:, 0] -= 1.0
    deg[:, -1] -= 1.0

    ys, xs = np.nonzero(solve_mask)
    b_norm = float(np.linalg.norm(b))
    nb = np.empty_like(u)
    residual = np.inf
    sweeps = 0
    while sweeps < max_iters:
        for color in colors:
            nb.fill(0.0)
            nb[1:, :] += u[:-1, :]
            nb[:-1, :] += u[1:, :]
            nb[:, 1:] += u[:, :-1]
            nb[:, :-1] += u[:, 1:]
            u[color] = nb[color] / deg[color]
        sweeps += 1
        if sweeps % 8 == 0 or sweeps == max_iters:
            x = u[ys, xs]
            residual = float(np.linalg.norm(b - a_mat @ x) / b_norm)
            if residual <= tol:
                break
    return u[ys, xs], residual, sweeps


def harmonic_inpaint(
    img: ImageGrid, known: MaskGrid, cfg: SolverConfig = SolverConfig()
) -> InpaintResult:
    """Fill unknown pixels so the discrete Laplacian vanishes there.

    Known pixels pass through bit-identically. Unknown components with
    no path to known data get the global known mean (flag
    "isolated-component-mean-fill"); components whose Dirichlet data is
    one constant are filled exactly without iterating. When the solver
    stops above tol the best iterate is returned with flag
    "not-converged". Residual is ||b - Au|| / ||b|| of the iterated
    system (0 when nothing was iterated).
    """
    if img.values.shape != known.bits.shape:
        raise ValueError("image and known mask must share a shape")
    unknown = ~known.bits
    if not unknown.any():
        return InpaintResult(img, 0.0, 0, ())
    if not known.bits.any():
        raise ValueError("no known pixels to take boundary data from")

    values = img.values
    out = values.copy()
    flags: list[str] = []

    labels, ncomp = ndimage.label(unknown, structure=_STRUCT4)
    contact_labels, contact_values = _dirichlet_contacts(values, unknown, labels)
    reachable = np.zeros(ncomp + 1, dtype=bool)
    reachable[np.unique(contact_labels)] = True

    unreachable = unknown & ~reachable[labels]
    if unreachable.any():
        out[unreachable] = float(values[known.bits].mean())
        flags.append("isolated-component-mean-fill")

    # constant-Dirichlet components are exactly their boundary constant
    order = np.argsort(contact_labels, kind="stable")
    sorted_labels = contact_labels[order]
    sorted_values = contact_values[order]
    starts = np.flatnonzero(np.r_[True, sorted_labels[1:] != sorted_labels[:-1]])
    solve_mask = np.zeros_like(unknown)
    for i, start in enumerate(starts):
        stop = starts[i + 1] if i + 1 < starts.size else sorted_labels.size
        lab = int(sorted_labels[start])
        vals = sorted_values[start:stop]
        comp = labels == lab
        if vals.max() == vals.min():
            out[comp] = vals[0]
        else:
            solve_mask |= comp

    if not solve_mask.any():
        return InpaintResult(ImageGrid(out, spacing=img.spacing), 0.0, 0, tuple(flags))

    a_mat, b = _assemble(values, solve_mask)
    n = b.size
    max_iters = cfg.effective_max_iters(n)
    b_norm = float(np.linalg.norm(b))
    ys, xs = np.nonzero(solve_mask)

    if b_norm == 0.0:  # zero boundary data: zero is the exact solution
        out[ys, xs] = 0.0
        return InpaintResult(ImageGrid(out, spacing=img.spacing), 0.0, 0, tuple(flags))

    x0_fill = float(contact_values.mean())
    if cfg.method == "gauss-seidel":
        x, residual, iters = _gauss_seidel(
            values, solve_mask, a_mat, b, x0_fill, cfg.tol, max_iters
        )
    else:
        counter = {"n": 0}

        def _count(_xk: np.ndarray) -> None:
            counter["n"] += 1

        x0 = np.full(n, x0_fill)
        x, _info = _sparse_cg(
            a_mat, b, x0=x0, rtol=cfg.tol, atol=0.0, maxiter=max_iters, callback=_count
        )
        iters = counter["n"]
        residual = float(np.linalg.norm(b - a_mat @ x) / b_norm)

    if residual > cfg.tol:
        flags.append("not-converged")
    out[ys, xs] = x
    return InpaintResult(ImageGrid(out, spacing=img.spacing), residual, iters, tuple(flags))


def complete_with_diagnostics(
    ext: ExtensionResult, cfg: SolverConfig = SolverConfig()
) -> tuple[ImageGrid, InpaintResult]:
    """Inpaint an extended slice (known = extended FOV) and clamp to the window."""
    res = harmonic_inpaint(ext.extended_image, ext.extended_fov, cfg)
    if "not-converged" in res.flags:
        raise NumericError(
            f"harmonic solve stopped at residual {res.residual:.3e} "
            f"after {res.iters} iterations (tol {cfg.tol:.1e})"
        )
    clamped = ImageGrid(
        np.clip(res.image.values, WINDOW_FLOOR_HU, WINDOW_CEIL_HU),
        spacing=res.image.spacing,
    )
    return clamped, res


def complete_sample(ext: ExtensionResult, cfg: SolverConfig = SolverConfig()) -> ImageGrid:
    """Completed slice for an extension result (see complete_with_diagnostics)."""
    return complete_with_diagnostics(ext, cfg)[0]
