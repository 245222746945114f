"""Spectral differential geometry of Kähler metrics on flat complex tori.

Conventions
-----------
The torus is [0, 2*pi)^(2n) with real coordinates ordered
(x_1, y_1, ..., x_n, y_n) and z_j = x_j + i*y_j.  Complex derivatives are

    d/dz_j    = (d/dx_j - i d/dy_j) / 2
    d/dzbar_j = (d/dx_j + i d/dy_j) / 2

so the complex Hessian ``ddbar(f)[i, j] = d^2 f / dz_i dzbar_j`` equals
``(f_xx + f_yy) / 4`` when n = 1.  A Kähler form ``i g_{i jbar} dz^i ^ dzbar^j``
is stored through its coefficient matrix ``g[..., i, j] = g_{i jbar}``, and
"adding i ddbar(phi)" to a metric adds ``ddbar(phi)`` to that matrix.  Every
module of the package uses this single convention.

Index layout: grid axes come first, tensor indices last.  Derivative indices
produced by this module are appended after the tensor indices of the input.
All spectral operators zero the Nyquist wavenumber.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

HERMITIAN_TOL = 1e-12
POSITIVITY_FLOOR = 1e-10


class PositivityLoss(ArithmeticError):
    """A metric stopped being positive definite at some grid node."""

    def __init__(self, message, node=None, min_eigenvalue=None):
        super().__init__(message)
        self.node = node
        self.min_eigenvalue = min_eigenvalue


@dataclass(frozen=True)
class TorusGrid:
    complex_dim: int
    resolution: int

    def __post_init__(self):
        if self.complex_dim not in (1, 2):
            raise ValueError(f"complex_dim must be 1 or 2, got {self.complex_dim}")
        if self.resolution < 8 or self.resolution % 2:
            raise ValueError(f"resolution must be even and >= 8, got {self.resolution}")

    @property
    def n(self):
        return self.complex_dim

    @property
    def ndim(self):
        return 2 * self.complex_dim

    @property
    def shape(self):
        return (self.resolution,) * self.ndim

    @property
    def axes(self):
        return tuple(range(self.ndim))

    @property
    def spacing(self):
        return 2 * np.pi / self.resolution

    @property
    def size(self):
        return self.resolution ** self.ndim

    def coordinates(self):
        """Real coordinate arrays (x_1, y_1, ...), each of the full grid shape."""
        x = np.arange(self.resolution) * self.spacing
        return np.meshgrid(*([x] * self.ndim), indexing="ij")

    def wavenumber(self, direction):
        """Integer wavenumbers along one real direction, broadcastable to the grid."""
        return _wavenumbers(self.resolution, self.ndim)[direction]

    def max_kappa_sq(self):
        """Largest |kappa|^2 = |k|^2 / 4 resolved by the derivative operators."""
        kmax = self.resolution // 2 - 1
        return self.ndim * kmax ** 2 / 4.0

    def node_index(self, flat_index):
        return tuple(int(i) for i in np.unravel_index(flat_index, self.shape))


@lru_cache(maxsize=None)
def _wavenumbers(N, ndim):
    k = np.fft.fftfreq(N, d=1.0 / N)
    k[N // 2] = 0.0
    out = []
    for d in range(ndim):
        shape = [1] * ndim
        shape[d] = N
        out.append(k.reshape(shape))
    return tuple(out)


def _grid_symbol(symbol, extra_dims):
    return symbol.reshape(symbol.shape + (1,) * extra_dims)


def spectral_derivative(field, grid, direction, order=1):
    """Derivative of a periodic field along real direction ``direction``.

    Exact at the nodes for trigonometric polynomials of degree < N/2.
    Tensor indices, if any, trail the grid axes and are left untouched.
    """
    if not 0 <= direction < grid.ndim:
        raise ValueError(f"direction must lie in [0, {grid.ndim}), got {direction}")
    if order < 0:
        raise ValueError("order must be non-negative")
    field = np.asarray(field)
    extra = field.ndim - grid.ndim
    sym = _grid_symbol((1j * grid.wavenumber(direction)) ** order, extra)
    out = np.fft.ifftn(np.fft.fftn(field, axes=grid.axes) * sym, axes=grid.axes)
    return out.real if np.isrealobj(field) else out


def _holomorphic_symbols(grid, extra):
    """Fourier symbols of d/dz_j and d/dzbar_j."""
    dz, dzb = [], []
    for j in range(grid.n):
        kx = grid.wavenumber(2 * j)
        ky = grid.wavenumber(2 * j + 1)
        dz.append(_grid_symbol(0.5j * (kx - 1j * ky), extra))
        dzb.append(_grid_symbol(0.5j * (kx + 1j * ky), extra))
    return dz, dzb


def complex_gradient(field, grid):
    """Return (d_z field, d_zbar field), each with a trailing derivative index."""
    field = np.asarray(field)
    fhat = np.fft.fftn(field, axes=grid.axes)
    dz, dzb = _holomorphic_symbols(grid, field.ndim - grid.ndim)
    d = np.stack([np.fft.ifftn(fhat * s, axes=grid.axes) for s in dz], axis=-1)
    db = np.stack([np.fft.ifftn(fhat * s, axes=grid.axes) for s in dzb], axis=-1)
    return d, db


def ddbar(field, grid):
    """Complex Hessian d^2/dz_i dzbar_j of a field, indices (i, j) appended last."""
    field = np.asarray(field)
    fhat = np.fft.fftn(field, axes=grid.axes)
    dz, dzb = _holomorphic_symbols(grid, field.ndim - grid.ndim)
    n = grid.n
    out = np.empty(field.shape + (n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            out[..., i, j] = np.fft.ifftn(fhat * dz[i] * dzb[j], axes=grid.axes)
    return out


def potential_hessian(phi, grid):
    """Exactly Hermitian complex Hessian of a real potential (fast real-FFT path)."""
    phi = np.asarray(phi, dtype=float)
    return hessian_from_spectrum(np.fft.rfftn(phi, axes=grid.axes), grid)


def hessian_from_spectrum(phat, grid):
    """potential_hessian for a potential given by its real-FFT coefficients."""
    n, N = grid.n, grid.resolution
    axes = grid.axes
    ks = _rfft_wavenumbers(N, grid.ndim)
    out = np.empty(grid.shape + (n, n), dtype=complex)

    def apply(sym):
        return np.fft.irfftn(phat * sym, s=grid.shape, axes=axes)

    for i in range(n):
        kx, ky = ks[2 * i], ks[2 * i + 1]
        out[..., i, i] = apply(-(kx ** 2 + ky ** 2) / 4.0)
        for j in range(i + 1, n):
            qx, qy = ks[2 * j], ks[2 * j + 1]
            re = apply(-(kx * qx + ky * qy) / 4.0)
            im = apply(-(kx * qy - ky * qx) / 4.0)
            out[..., i, j] = re + 1j * im
            out[..., j, i] = re - 1j * im
    return out


def flat_decomposition(form, grid):
    """Split a closed (1,1)-form on the torus as (constant form) + i ddbar(rho).

    Returns ``(mean, rho, residual)``; ``rho`` has zero mean and ``residual``
    is the sup-norm mismatch, which is round-off for closed forms without
    Nyquist content.
    """
    vals = _as_form(form, grid)
    mean = vals.mean(axis=grid.axes)
    tr = np.trace(vals - mean, axis1=-2, axis2=-1).real
    sym = complex_laplacian_symbol(grid)
    safe = np.where(sym == 0, 1.0, sym)
    rhat = np.where(sym == 0, 0.0, np.fft.rfftn(tr, axes=grid.axes) / safe)
    rho = np.fft.irfftn(rhat, s=grid.shape, axes=grid.axes)
    residual = float(np.max(np.abs(vals - mean - potential_hessian(rho, grid))))
    return mean, rho, residual


def complex_laplacian_symbol(grid, real_fft=True):
    """Symbol of sum_j d^2/dz_j dzbar_j, i.e. -|k|^2 / 4."""
    ks = _rfft_wavenumbers(grid.resolution, grid.ndim) if real_fft else \
        _wavenumbers(grid.resolution, grid.ndim)
    return -sum(k ** 2 for k in ks) / 4.0


@lru_cache(maxsize=None)
def _rfft_wavenumbers(N, ndim):
    full = np.fft.fftfreq(N, d=1.0 / N)
    full[N // 2] = 0.0
    half = np.fft.rfftfreq(N, d=1.0 / N)
    half[-1] = 0.0
    out = []
    for d in range(ndim):
        shape = [1] * ndim
        shape[d] = N // 2 + 1 if d == ndim - 1 else N
        out.append((half if d == ndim - 1 else full).reshape(shape))
    return tuple(out)


# --- pointwise Hermitian linear algebra (closed forms for n <= 2) ------------

def herm_det(g):
    n = g.shape[-1]
    if n == 1:
        return g[..., 0, 0].real.copy()
    if n == 2:
        return (g[..., 0, 0] * g[..., 1, 1] - np.abs(g[..., 0, 1]) ** 2).real
    return np.linalg.det(g).real


def herm_inv(g):
    n = g.shape[-1]
    if n == 1:
        return 1.0 / g
    if n == 2:
        det = herm_det(g)[..., None, None]
        out = np.empty_like(g)
        out[..., 0, 0] = g[..., 1, 1]
        out[..., 1, 1] = g[..., 0, 0]
        out[..., 0, 1] = -g[..., 0, 1]
        out[..., 1, 0] = -g[..., 1, 0]
        return out / det
    return np.linalg.inv(g)


def herm_eigvalsh(g):
    """Ascending eigenvalues of Hermitian matrices, shape (..., n)."""
    n = g.shape[-1]
    if n == 1:
        return g[..., 0, :].real.copy()
    if n == 2:
        a, d = g[..., 0, 0].real, g[..., 1, 1].real
        half_tr = 0.5 * (a + d)
        rad = np.sqrt((0.5 * (a - d)) ** 2 + np.abs(g[..., 0, 1]) ** 2)
        return np.stack([half_tr - rad, half_tr + rad], axis=-1)
    return np.linalg.eigvalsh(g)


def hermitize(g):
    return 0.5 * (g + np.conj(np.swapaxes(g, -1, -2)))


def generalized_eigenvalues(a, b):
    """Eigenvalues of b^{-1} a at each node for Hermitian a and positive b."""
    n = a.shape[-1]
    if n == 1:
        return (a[..., 0, 0].real / b[..., 0, 0].real)[..., None]
    L = np.linalg.cholesky(b)
    Linv = np.linalg.inv(L)
    m = Linv @ a @ np.conj(np.swapaxes(Linv, -1, -2))
    return herm_eigvalsh(hermitize(m))


# --- metric fields ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MetricField:
    """Hermitian positive-definite metric coefficients g_{i jbar} on a torus grid.

    Construction validates Hermiticity and positivity; the value array is made
    read-only so instances can be shared freely.
    """

    grid: TorusGrid
    values: np.ndarray
    positivity_floor: float = POSITIVITY_FLOOR

    def __post_init__(self):
        g = np.array(self.values, dtype=complex)
        n = self.grid.n
        if g.shape != self.grid.shape + (n, n):
            raise ValueError(f"metric values must have shape {self.grid.shape + (n, n)}, "
                             f"got {g.shape}")
        skew = np.max(np.abs(g - np.conj(np.swapaxes(g, -1, -2))))
        scale = max(1.0, float(np.max(np.abs(g))))
        if not np.isfinite(skew) or skew > HERMITIAN_TOL * scale:
            raise ValueError(f"metric is not Hermitian (defect {skew:.3e})")
        g = hermitize(g)
        g.setflags(write=False)
        object.__setattr__(self, "values", g)
        eig_min = self.eigenvalues[..., 0]
        if not np.all(eig_min > self.positivity_floor):
            bad = np.where(np.isfinite(eig_min), eig_min, -np.inf)
            flat = int(np.argmin(bad))
            node = self.grid.node_index(flat)
            raise PositivityLoss(
                f"metric not positive definite at node {node} "
                f"(min eigenvalue {bad.ravel()[flat]:.3e})",
                node=node, min_eigenvalue=float(bad.ravel()[flat]))

    @classmethod
    def flat(cls, grid, scale=1.0):
        """Constant metric ``scale * I`` (``scale`` may also be an n x n matrix)."""
        base = np.broadcast_to(np.eye(grid.n) * scale if np.ndim(scale) == 0
                               else np.asarray(scale), (grid.n, grid.n))
        return cls(grid, np.broadcast_to(base, grid.shape + (grid.n, grid.n)).copy())

    @property
    def n(self):
        return self.grid.n

    @cached_property
    def eigenvalues(self):
        return herm_eigvalsh(self.values)

    @cached_property
    def det(self):
        return herm_det(self.values)

    @cached_property
    def inverse(self):
        return herm_inv(self.values)

    def scaled(self, c):
        return MetricField(self.grid, c * self.values, self.positivity_floor)

    def __add__(self, other):
        other = other.values if isinstance(other, MetricField) else other
        return MetricField(self.grid, self.values + other, self.positivity_floor)


@dataclass(frozen=True, eq=False)
class CurvatureField:
    rm: np.ndarray        # R_{i jbar k lbar}, indices (i, j, k, l) last
    ric: np.ndarray       # Ric_{i jbar}
    scalar: np.ndarray    # g^{jbar i} Ric_{i jbar}
    norm: np.ndarray      # |Rm|_g per node

    @property
    def sup_rm_norm(self):
        return float(np.max(self.norm))


@dataclass(frozen=True, eq=False)
class ConnectionDeviation:
    psi: np.ndarray       # Psi^k_{ij}, indices (k, i, j) last
    s_field: np.ndarray

    @property
    def sup_s(self):
        return float(np.max(self.s_field))


def _as_form(form, grid):
    """Coerce None / scalar zero / MetricField / array to a Hermitian form field."""
    n = grid.n
    if form is None or (np.ndim(form) == 0 and form == 0):
        return np.zeros(grid.shape + (n, n), dtype=complex)
    if isinstance(form, MetricField):
        return form.values
    arr = np.asarray(form, dtype=complex)
    return np.broadcast_to(arr, grid.shape + (n, n))


def metric_from_potential(reference, phi, weights=(1.0, 0.0), second_form=None,
                          positivity_floor=POSITIVITY_FLOOR):
    """Build ``a * reference + b * second_form + i ddbar(phi)``.

    ``second_form`` may be a MetricField, a Hermitian array field, or None for
    zero; it need not be positive.  Raises PositivityLoss when the result
    leaves the positive cone.
    """
    a, b = weights
    if a < 0 or b < 0:
        raise ValueError("weights must be non-negative")
    grid = reference.grid
    phi = np.asarray(phi, dtype=float)
    if phi.shape != grid.shape:
        raise ValueError(f"potential must have grid shape {grid.shape}")
    values = a * reference.values + potential_hessian(phi, grid)
    if b:
        values = values + b * _as_form(second_form, grid)
    return MetricField(grid, values, positivity_floor)


def kahler_defect(metric):
    """max |d_k g_{i jbar} - d_i g_{k jbar}| over nodes (zero for closed forms)."""
    d, _ = complex_gradient(metric.values, metric.grid)  # [..., i, j, k] = d_k g_ij
    return float(np.max(np.abs(d - np.swapaxes(d, -1, -3))))


def christoffel(metric):
    """Kähler Christoffel symbols Gamma^k_{ij} = g^{k lbar} d_i g_{j lbar}, layout (k, i, j)."""
    d, _ = complex_gradient(metric.values, metric.grid)  # [..., j, l, i]
    return np.einsum("...lk,...jli->...kij", metric.inverse, d)


def curvature(metric):
    """Full curvature of a Kähler metric.

    R_{i jbar k lbar} = -d_i d_jbar g_{k lbar} + g^{p qbar} d_i g_{k qbar} d_jbar g_{p lbar}
    """
    g, ginv = metric.values, metric.inverse
    grid = metric.grid
    d, db = complex_gradient(g, grid)            # [..., k, q, i]
    hess = ddbar(g, grid)                        # [..., k, l, i, j]
    rm = -np.moveaxis(hess, (-4, -3, -2, -1), (-2, -1, -4, -3))
    rm = rm + np.einsum("...qp,...kqi,...plj->...ijkl", ginv, d, db)
    ric = np.einsum("...lk,...ijkl->...ij", ginv, rm)
    scalar = np.einsum("...ji,...ij->...", ginv, ric).real
    return CurvatureField(rm=rm, ric=ric, scalar=scalar, norm=rm_norm(rm, ginv))


def rm_norm(rm, ginv):
    """Pointwise |Rm|_g for a tensor with layout (i, jbar, k, lbar)."""
    if rm.shape[-1] == 1:
        return np.abs(rm[..., 0, 0, 0, 0]) * np.abs(ginv[..., 0, 0]) ** 2
    sq = np.einsum("...ijkl,...abcd,...ai,...jb,...ck,...ld->...",
                   rm, np.conj(rm), ginv, ginv, ginv, ginv)
    return np.sqrt(np.maximum(sq.real, 0.0))


def ricci_from_logdet(metric):
    """Ric_{i jbar} = -d_i d_jbar log det g (independent of ``curvature``)."""
    return -ddbar(np.log(metric.det), metric.grid)


def trace(base, other, check=True):
    """tr_base(other) = g_base^{jbar i} g_other,i jbar per node."""
    other_v = other.values if isinstance(other, MetricField) else np.asarray(other)
    tr = np.einsum("...ji,...ij->...", base.inverse, other_v).real
    if check and isinstance(other, MetricField):
        n = base.n
        amgm = n * (other.det / base.det) ** (1.0 / n)
        if np.any(tr < amgm * (1 - 1e-10) - 1e-12):
            raise RuntimeError("trace violates the arithmetic-geometric mean bound")
    return tr


def eigen_ratio(a, b):
    """(min, max) over nodes of the generalized eigenvalues of a relative to b.

    ``max(max, 1/min)`` is the smallest C with C^{-1} b <= a <= C b.
    """
    ev = generalized_eigenvalues(a.values, b.values)
    return float(np.min(ev)), float(np.max(ev))


def psi_and_s(g, g_ref):
    """Connection difference Psi = Gamma(g) - Gamma(g_ref) and S = |Psi|_g^2."""
    psi = christoffel(g) - christoffel(g_ref)
    ginv = g.inverse
    s = np.einsum("...ai,...bj,...kc,...kij,...cab->...",
                  ginv, ginv, g.values, psi, np.conj(psi)).real
    return ConnectionDeviation(psi=psi, s_field=np.maximum(s, 0.0))


def laplacian_at(field, metric, node):
    """Second-order finite-difference Delta_g f = g^{jbar i} d_i d_jbar f at one node.

    At a discrete maximum of ``field`` the value is <= 0 up to round-off when n = 1.
    """
    grid = metric.grid
    h = grid.spacing
    n = grid.n
    f = np.asarray(field)
    idx = tuple(node)

    def shifted(offsets):
        pos = tuple((i + o) % grid.resolution for i, o in zip(idx, offsets))
        return f[pos]

    def unit(d, s=1):
        o = [0] * grid.ndim
        o[d] = s
        return o

    def second(d):
        return (shifted(unit(d)) - 2 * f[idx] + shifted(unit(d, -1))) / h ** 2

    def mixed(d, e):
        o = lambda sd, se: [sd if k == d else se if k == e else 0 for k in range(grid.ndim)]
        return (shifted(o(1, 1)) - shifted(o(1, -1)) - shifted(o(-1, 1))
                + shifted(o(-1, -1))) / (4 * h ** 2)

    hess = np.empty((n, n), dtype=complex)
    for i in range(n):
        hess[i, i] = 0.25 * (second(2 * i) + second(2 * i + 1))
        for j in range(i + 1, n):
            xi, yi, xj, yj = 2 * i, 2 * i + 1, 2 * j, 2 * j + 1
            re = mixed(xi, xj) + mixed(yi, yj)
            im = mixed(xi, yj) - mixed(yi, xj)
            hess[i, j] = 0.25 * (re + 1j * im)
            hess[j, i] = np.conj(hess[i, j])
    ginv = metric.inverse[idx]
    return float(np.einsum("ji,ij->", ginv, hess).real)


# --- initial metric families ------------------------------------------------

def _unit_mode_potential(grid, mode, phase=0.0):
    """Potential whose complex Hessian is kappa kappa^H / |kappa|^2 * cos(k.x + phase)."""
    k = np.asarray(mode, dtype=float)
    if k.shape != (grid.ndim,) or not np.any(k):
        raise ValueError(f"mode must be a non-zero integer vector of length {grid.ndim}")
    coords = grid.coordinates()
    arg = sum(kd * xd for kd, xd in zip(k, coords)) + phase
    kappa_sq = float(np.sum(k ** 2)) / 4.0
    return -np.cos(arg) / kappa_sq


def cosine_metric(grid, amplitude, mode, phase=0.0, base=None):
    """Kähler metric ``base + i ddbar f`` whose perturbation is ``amplitude * cos(k.x + phase)``
    along the direction kappa; for n = 1, mode (1, 0): g = 1 + amplitude * cos(x)."""
    base = base if base is not None else MetricField.flat(grid)
    f = amplitude * _unit_mode_potential(grid, mode, phase)
    return metric_from_potential(base, f)


def random_metric(grid, eps, modes, seed, max_wavenumber=2):
    """Flat metric plus ``modes`` seeded low-frequency cosine perturbations.

    Amplitudes are drawn from [-eps, eps]; with eps < 1/(2 * modes) the
    smallest eigenvalue stays above 1/2.
    """
    if modes < 1:
        raise ValueError("modes must be >= 1")
    if not 0 <= eps < 1.0 / (2 * modes):
        raise ValueError(f"eps must lie in [0, 1/(2*modes)) = [0, {1 / (2 * modes):.4g})")
    rng = np.random.default_rng(seed)
    f = np.zeros(grid.shape)
    for _ in range(modes):
        while True:
            k = rng.integers(-max_wavenumber, max_wavenumber + 1, size=grid.ndim)
            if np.any(k):
                break
        amp = rng.uniform(-eps, eps)
        phase = rng.uniform(0.0, 2 * np.pi)
        f += amp * _unit_mode_potential(grid, k, phase)
    return metric_from_potential(MetricField.flat(grid), f)
