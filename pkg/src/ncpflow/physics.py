"""Constitutive laws for the gas/liquid hydrogen-water system.

Relative permeability (power law or Van Genuchten), capillary pressure
(linear or regularized Van Genuchten), Henry's law and the ideal gas law.
Every evaluation returns the value together with its analytic derivative
with respect to liquid saturation (or gas pressure), so the Jacobian
assembly sees exactly the same numbers as the residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GAS_CONSTANT = 8.314  # J/mol/K

POWER_LAW = "power_law"
VAN_GENUCHTEN = "van_genuchten"
LINEAR = "linear"


@dataclass(frozen=True)
class FluidParams:
    """Rock and fluid constants.

    ``mu_l`` defaults to the benchmark's 1e-9 Pa s, which is far below the
    physical viscosity of water (~1e-3 Pa s); override it if you want a
    physical liquid.
    """

    perm: float = 1e-16          # absolute permeability, m^2
    phi: float = 0.3             # porosity
    diff_lh: float = 3e-9        # hydrogen diffusion in liquid, m^2/s
    mu_l: float = 1e-9           # liquid viscosity, Pa s
    mu_g: float = 9e-6           # gas viscosity, Pa s
    henry: float = 7.65e-6       # Henry constant, mol/Pa/m^3
    molar_h: float = 2e-3        # molar mass of hydrogen, kg/mol
    molar_w: float = 1e-2        # molar mass of water, kg/mol
    rho_w_std: float = 1e3       # standard water density, kg/m^3
    temperature: float = 303.0   # K
    r_gas: float = GAS_CONSTANT
    gravity: tuple = (0.0, 0.0, 0.0)  # m/s^2, off by default

    def __post_init__(self):
        for name in ("perm", "phi", "diff_lh", "mu_l", "mu_g", "henry",
                     "molar_h", "molar_w", "rho_w_std", "temperature", "r_gas"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"FluidParams.{name} must be positive")
        if len(self.gravity) != 3:
            raise ValueError("gravity must have three components")

    @property
    def c_h(self):
        """Henry slope: dissolved hydrogen density per unit gas pressure."""
        return self.henry * self.molar_h

    @property
    def c_v(self):
        """Ideal-gas slope: gas density per unit gas pressure."""
        return self.molar_h / (self.r_gas * self.temperature)


@dataclass(frozen=True)
class RelPermModel:
    variant: str = VAN_GENUCHTEN
    s_lr: float = 0.0            # residual liquid saturation
    s_gr: float = 0.0            # residual gas saturation
    n: float = 2.0               # Van Genuchten exponent
    eps: float = 1e-5            # evaluation clamp width (Van Genuchten only)

    def __post_init__(self):
        if self.variant not in (POWER_LAW, VAN_GENUCHTEN):
            raise ValueError(f"unknown relative permeability variant {self.variant!r}")
        if not (0.0 <= self.s_lr < 1.0 and 0.0 <= self.s_gr < 1.0):
            raise ValueError("residual saturations must lie in [0, 1)")
        if self.s_lr + self.s_gr >= 1.0:
            raise ValueError("s_lr + s_gr must be < 1")
        if self.variant == VAN_GENUCHTEN and self.n <= 1.0:
            raise ValueError("Van Genuchten exponent must exceed 1")
        if not (0.0 < self.eps < 0.5):
            raise ValueError("relperm clamp eps must lie in (0, 0.5)")

    @property
    def m(self):
        return 1.0 - 1.0 / self.n


@dataclass(frozen=True)
class CapPressModel:
    variant: str = VAN_GENUCHTEN
    p_entry: float = 2e6         # entry pressure, Pa
    n: float = 2.0
    eps: float = 1e-5            # regularization width in effective saturation

    def __post_init__(self):
        if self.variant not in (LINEAR, VAN_GENUCHTEN):
            raise ValueError(f"unknown capillary pressure variant {self.variant!r}")
        if self.p_entry <= 0.0:
            raise ValueError("entry pressure must be positive")
        if not (0.0 < self.eps < 0.5):
            raise ValueError("regularization eps must lie in (0, 0.5)")
        if self.variant == VAN_GENUCHTEN and self.n <= 1.0:
            raise ValueError("Van Genuchten exponent must exceed 1")

    @property
    def m(self):
        return 1.0 - 1.0 / self.n


def _shape_back(s_l, *arrays):
    # return floats for scalar input, arrays otherwise
    if np.ndim(s_l) == 0:
        return tuple(float(a[0]) for a in arrays)
    return arrays


def effective_saturation(s_l, rp: RelPermModel):
    """Affine map S_le = (S_l - S_lr)/(1 - S_lr - S_gr), unclamped."""
    arr = np.atleast_1d(np.asarray(s_l, dtype=float))
    span = 1.0 - rp.s_lr - rp.s_gr
    se = (arr - rp.s_lr) / span
    dse = np.full_like(se, 1.0 / span)
    return _shape_back(s_l, se, dse)


def relperm(s_l, rp: RelPermModel):
    """Relative permeabilities (k_rl, k_rg) and d/dS_l derivatives.

    The effective saturation is clamped to [0, 1] before evaluation and
    the derivative is zero in the clamped regions, so the curves stay C^0
    and monotone for any real S_l seen during Newton iterations.  Van
    Genuchten slopes blow up at both endpoints, so over the bands
    [0, eps] and [1-eps, 1] the curves are replaced by straight segments
    through the exact endpoint values (k_rl(1) = 1, k_rg(1) = 0, and so
    on).  The residual and Jacobian see the same regularized curve, the
    derivative stays bounded by (1 - k(1-eps))/eps, and a fully saturated
    cell keeps exactly zero gas mobility.
    """
    arr = np.atleast_1d(np.asarray(s_l, dtype=float))
    se, dse = effective_saturation(arr, rp)
    sc = np.clip(se, 0.0, 1.0)
    interior = (se > 0.0) & (se < 1.0)

    krl = np.empty_like(se)
    krg = np.empty_like(se)
    dkrl = np.zeros_like(se)
    dkrg = np.zeros_like(se)

    if rp.variant == POWER_LAW:
        krl[:] = sc ** 2
        krg[:] = (1.0 - sc) ** 2
        dkrl[interior] = 2.0 * sc[interior]
        dkrg[interior] = -2.0 * (1.0 - sc[interior])
    else:
        m = rp.m
        eps = rp.eps

        def vg_curves(s):
            u = s ** (1.0 / m)
            w = 1.0 - (1.0 - u) ** m
            return np.sqrt(s) * w ** 2, np.sqrt(1.0 - s) * (1.0 - u) ** (2.0 * m)

        krl[se <= 0.0] = 0.0
        krg[se <= 0.0] = 1.0
        krl[se >= 1.0] = 1.0
        krg[se >= 1.0] = 0.0

        krl_lo, krg_lo = vg_curves(np.asarray(eps))
        krl_hi, krg_hi = vg_curves(np.asarray(1.0 - eps))

        mid = (se >= eps) & (se <= 1.0 - eps)
        s = sc[mid]
        u = s ** (1.0 / m)
        one_minus_u = 1.0 - u
        w = 1.0 - one_minus_u ** m
        sqrt_s = np.sqrt(s)
        krl[mid] = sqrt_s * w ** 2
        dw = one_minus_u ** (m - 1.0) * s ** (1.0 / m - 1.0)
        dkrl[mid] = 0.5 * w ** 2 / sqrt_s + 2.0 * sqrt_s * w * dw
        sqrt_1ms = np.sqrt(1.0 - s)
        krg[mid] = sqrt_1ms * one_minus_u ** (2.0 * m)
        dkrg[mid] = (-0.5 * one_minus_u ** (2.0 * m) / sqrt_1ms
                     - 2.0 * sqrt_1ms * one_minus_u ** (2.0 * m - 1.0)
                     * s ** (1.0 / m - 1.0))

        lo_band = interior & (se < eps)
        t = sc[lo_band] / eps
        krl[lo_band] = krl_lo * t
        dkrl[lo_band] = krl_lo / eps
        krg[lo_band] = 1.0 + (krg_lo - 1.0) * t
        dkrg[lo_band] = (krg_lo - 1.0) / eps

        hi_band = interior & (se > 1.0 - eps)
        t = (sc[hi_band] - (1.0 - eps)) / eps
        krl[hi_band] = krl_hi + (1.0 - krl_hi) * t
        dkrl[hi_band] = (1.0 - krl_hi) / eps
        krg[hi_band] = krg_hi * (1.0 - t)
        dkrg[hi_band] = -krg_hi / eps

    return _shape_back(s_l, krl, krg, dkrl * dse, dkrg * dse)


def _vg_pc(se, cp: CapPressModel):
    # raw Van Genuchten curve; only valid on (0, 1)
    m = cp.m
    t = se ** (-1.0 / m) - 1.0
    pc = cp.p_entry * t ** (1.0 / cp.n)
    dpc = cp.p_entry * (1.0 / cp.n) * t ** (1.0 / cp.n - 1.0) * (-1.0 / m) * se ** (-1.0 / m - 1.0)
    return pc, dpc


def capillary(s_l, cp: CapPressModel, rp: RelPermModel):
    """Capillary pressure P_c(S_l) and its derivative, C^1 on all of R.

    The Van Genuchten curve is replaced by its tangent line outside
    [eps, 1-eps] in effective saturation, which keeps the derivative
    bounded when Newton iterates leave the physical range.
    """
    arr = np.atleast_1d(np.asarray(s_l, dtype=float))
    se, dse = effective_saturation(arr, rp)

    if cp.variant == LINEAR:
        pc = cp.p_entry * (1.0 - se)
        dpc = np.full_like(se, -cp.p_entry)
        return _shape_back(s_l, pc, dpc * dse)

    eps = cp.eps
    pc_lo, slope_lo = _vg_pc(np.asarray(eps), cp)
    pc_hi, slope_hi = _vg_pc(np.asarray(1.0 - eps), cp)

    pc = np.empty_like(se)
    dpc = np.empty_like(se)
    lo = se < eps
    hi = se > 1.0 - eps
    mid = ~(lo | hi)
    pc[mid], dpc[mid] = _vg_pc(se[mid], cp)
    pc[lo] = pc_lo + slope_lo * (se[lo] - eps)
    dpc[lo] = slope_lo
    pc[hi] = pc_hi + slope_hi * (se[hi] - (1.0 - eps))
    dpc[hi] = slope_hi
    return _shape_back(s_l, pc, dpc * dse)


def capillary_inverse(pc, cp: CapPressModel, rp: RelPermModel):
    """Liquid saturation with the given capillary pressure (scalar).

    Closed-form inverse polished by a few Newton steps on the regularized
    curve, so the result is exact even inside the tangent extensions.
    """
    pc = float(pc)
    if cp.variant == LINEAR:
        se = 1.0 - pc / cp.p_entry
    else:
        t = (pc / cp.p_entry) ** cp.n if pc > 0.0 else 0.0
        se = (1.0 + t) ** (-cp.m)
    span = 1.0 - rp.s_lr - rp.s_gr
    s_l = se * span + rp.s_lr
    for _ in range(50):
        val, dval = capillary(np.asarray([s_l]), cp, rp)
        err = float(val[0]) - pc
        if abs(err) <= 1e-12 * max(abs(pc), 1.0):
            break
        s_l -= err / float(dval[0])
    return float(s_l)


def phase_densities(p_g, params: FluidParams):
    """Gas density and the Henry-equilibrium dissolved hydrogen density."""
    arr = np.atleast_1d(np.asarray(p_g, dtype=float))
    return _shape_back(p_g, params.c_v * arr, params.c_h * arr)
