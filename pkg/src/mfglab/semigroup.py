"""Heat semigroup ``P_t`` (generator ½Δ) and its gradient on a truncated grid.

Both operators are discrete convolutions with the analytic kernels

    G(t, z) = (2πt)^{-d/2} exp(-|z|²/2t),     ∇G(t, z) = -(z/t) G(t, z),

sampled on a doubled grid and applied through real FFTs.  The doubled
grid makes the circular convolution a linear one, i.e. the field is
extended by zero outside ``[-L, L]^d`` (``pad="zero"``).  Value-function
style fields that tend to a non-zero constant at infinity should use
``pad="edge"``, which extends the field by its boundary values instead.
"""
from __future__ import annotations

import threading
from collections import OrderedDict

import numpy as np

from .grid import Field, FieldFlow, Grid, VectorField

__all__ = ["HeatOperator"]

_PADS = ("zero", "edge")


class HeatOperator:
    """Precomputed Fourier multipliers of ``P_t`` and ``∇P_t`` for one grid.

    Parameters
    ----------
    grid : Grid
        Spatial grid.
    dt, steps : float, int, optional
        Kernels for the ladder ``{dt, 2 dt, ..., steps dt}`` are built eagerly;
        any other ``t`` is built on first use and kept in a bounded cache.
    """

    def __init__(self, grid: Grid, dt: float | None = None, steps: int = 0, cache_size: int = 1024):
        self.grid = grid
        n = grid.n
        self._padded = (2 * n,) * grid.dim
        # circular offsets of the doubled grid; index n is never reached by a valid pair
        m = np.arange(2 * n)
        off = np.where(m < n, m, m - 2 * n).astype(float) * grid.h
        off[n] = np.nan
        self._offsets = np.meshgrid(*([off] * grid.dim), indexing="ij")
        self._cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size
        self._lock = threading.Lock()
        self.ladder = () if dt is None else tuple(k * dt for k in range(1, steps + 1))
        for t in self.ladder:
            self.heat_multiplier(t)
            self.grad_multiplier(t)

    # -- kernels -------------------------------------------------------------
    def _build(self, t: float):
        r2 = sum(o * o for o in self._offsets)
        with np.errstate(invalid="ignore"):
            g = np.exp(-r2 / (2.0 * t))
        g[np.isnan(g)] = 0.0
        # unit discrete mass; differs from (2πt)^{-d/2} h^d only when t is under-resolved
        g /= g.sum()
        heat_hat = np.fft.rfftn(g).real
        grads = []
        for o in self._offsets:
            k = np.where(np.isnan(o), 0.0, -np.nan_to_num(o) / t * g)
            grads.append(np.fft.rfftn(k))
        return heat_hat, np.stack(grads)

    def _kernels(self, t: float):
        key = float(t)
        with self._lock:
            hit = self._cache.get(key)
            if hit is not None:
                self._cache.move_to_end(key)
                return hit
        built = self._build(key)
        with self._lock:
            self._cache[key] = built
            while len(self._cache) > self._cache_size + len(self.ladder):
                self._cache.popitem(last=False)
        return built

    def heat_multiplier(self, t: float) -> np.ndarray:
        """Fourier multiplier of ``P_t`` on the doubled grid (real, in (0, 1])."""
        if t < 0:
            raise ValueError(f"heat semigroup needs t >= 0, got {t}")
        if t == 0:
            return np.ones(self._rfft_shape)
        return self._kernels(t)[0]

    def grad_multiplier(self, t: float) -> np.ndarray:
        if t <= 0:
            raise ValueError(f"gradient of the heat semigroup needs t > 0, got {t}")
        return self._kernels(t)[1]

    @property
    def _rfft_shape(self):
        s = list(self._padded)
        s[-1] = s[-1] // 2 + 1
        return tuple(s)

    # -- transforms ----------------------------------------------------------
    def transform(self, values: np.ndarray, pad: str = "zero") -> np.ndarray:
        """FFT of ``values`` extended to the doubled grid."""
        if pad not in _PADS:
            raise ValueError(f"pad must be one of {_PADS}")
        n = self.grid.n
        axes = tuple(range(-self.grid.dim, 0))
        if pad == "zero":
            return np.fft.rfftn(values, s=self._padded, axes=axes)
        lead = values.ndim - self.grid.dim
        widths = [(0, 0)] * lead + [(n // 2, n // 2)] * self.grid.dim
        ext = np.pad(values, widths, mode="edge")
        ext = np.roll(ext, [-(n // 2)] * self.grid.dim, axis=axes)
        return np.fft.rfftn(ext, axes=axes)

    def inverse(self, hat: np.ndarray) -> np.ndarray:
        n = self.grid.n
        axes = tuple(range(-self.grid.dim, 0))
        full = np.fft.irfftn(hat, s=self._padded, axes=axes)
        crop = (Ellipsis,) + (slice(0, n),) * self.grid.dim
        return np.ascontiguousarray(full[crop])

    # -- operators -----------------------------------------------------------
    def apply(self, t: float, f: Field, pad: str = "zero") -> Field:
        """``P_t f``."""
        if t < 0:
            raise ValueError(f"heat semigroup needs t >= 0, got {t}")
        if t == 0:
            return Field(f.grid, f.values)
        self._check(f)
        return Field(self.grid, self.inverse(self.heat_multiplier(t) * self.transform(f.values, pad)))

    def apply_gradient(self, t: float, f: Field, pad: str = "zero") -> VectorField:
        """``∇P_t f`` via convolution with ``∇G(t, ·)``."""
        if t <= 0:
            raise ValueError(f"gradient of the heat semigroup needs t > 0, got {t}")
        self._check(f)
        fh = self.transform(f.values, pad)
        return VectorField(self.grid, self.inverse(self.grad_multiplier(t) * fh))

    def apply_divergence(self, t: float, v: VectorField, pad: str = "zero") -> Field:
        """``Σ_i ∂_i P_t v_i``: the gradient operator contracted with a vector field."""
        if t <= 0:
            raise ValueError(f"gradient of the heat semigroup needs t > 0, got {t}")
        self._check(v)
        vh = self.transform(v.components, pad)
        return Field(self.grid, self.inverse(np.sum(self.grad_multiplier(t) * vh, axis=0)))

    def flow(self, f: Field, steps: int, t1: float, pad: str = "zero") -> FieldFlow:
        """Frames ``P_{t_k} f`` on ``t_k = k t1/steps``."""
        dt = t1 / steps
        fh = self.transform(f.values, pad)
        frames = [f.values] + [self.inverse(self.heat_multiplier(k * dt) * fh) for k in range(1, steps + 1)]
        return FieldFlow(self.grid, 0.0, t1, np.stack(frames))

    def _check(self, f):
        if f.grid != self.grid:
            raise ValueError("field grid does not match operator grid")
