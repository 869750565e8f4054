"""
Generalized inverse Gaussian variates.

Density ``x^(lam-1) exp(-(chi/x + psi*x)/2)`` on ``x > 0``. The general case
uses the rejection schemes of Hoermann & Leydold (2014): ratio-of-uniforms
with or without mode shift, plus the dedicated envelope for small ``omega``
and ``0 <= lam < 1``. All three run vectorized over parameter arrays; each
rejection loop retries only the pending entries, so the RNG stream consumed
is a deterministic function of the inputs.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError


class GIGParameterError(NumericalError, ValueError):
    pass


def _mode(lam, omega):
    # mode of y^(lam-1) exp(-omega/2 (y + 1/y))
    return np.where(
        lam >= 1.0,
        (np.sqrt((lam - 1.0) ** 2 + omega ** 2) + (lam - 1.0)) / omega,
        omega / (np.sqrt((1.0 - lam) ** 2 + omega ** 2) + (1.0 - lam)),
    )


def _rou_noshift(lam, omega, rng):
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = _mode(lam, omega)
    nc = t * np.log(xm) - s * (xm + 1.0 / xm)
    ym = ((lam + 1.0) + np.sqrt((lam + 1.0) ** 2 + omega ** 2)) / omega
    um = np.exp(0.5 * (lam + 1.0) * np.log(ym) - s * (ym + 1.0 / ym) - nc)

    out = np.empty_like(lam)
    pending = np.arange(lam.size)
    while pending.size:
        u = um[pending] * rng.random(pending.size)
        v = rng.random(pending.size)
        x = u / v
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = np.log(v) <= t[pending] * np.log(x) - s[pending] * (x + 1.0 / x) - nc[pending]
        out[pending[ok]] = x[ok]
        pending = pending[~ok]
    return out


def _rou_shift(lam, omega, rng):
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = _mode(lam, omega)
    nc = t * np.log(xm) - s * (xm + 1.0 / xm)

    # extrema of (x - xm) sqrt(f(x)) are roots of a cubic; Cardano form
    a = -(2.0 * (lam + 1.0) / omega + xm)
    b = 2.0 * (lam - 1.0) * xm / omega - 1.0
    c = xm
    p = b - a * a / 3.0
    q = 2.0 * a ** 3 / 27.0 - a * b / 3.0 + c
    fi = np.arccos(np.clip(-q / (2.0 * np.sqrt(-(p ** 3) / 27.0)), -1.0, 1.0))
    fak = 2.0 * np.sqrt(-p / 3.0)
    y1 = fak * np.cos(fi / 3.0) - a / 3.0
    y2 = fak * np.cos(fi / 3.0 + 4.0 / 3.0 * np.pi) - a / 3.0
    uplus = (y1 - xm) * np.exp(t * np.log(y1) - s * (y1 + 1.0 / y1) - nc)
    uminus = (y2 - xm) * np.exp(t * np.log(y2) - s * (y2 + 1.0 / y2) - nc)

    out = np.empty_like(lam)
    pending = np.arange(lam.size)
    while pending.size:
        um, up = uminus[pending], uplus[pending]
        u = um + rng.random(pending.size) * (up - um)
        v = rng.random(pending.size)
        x = u / v + xm[pending]
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = (x > 0.0) & (
                np.log(v) <= t[pending] * np.log(x) - s[pending] * (x + 1.0 / x) - nc[pending])
        out[pending[ok]] = x[ok]
        pending = pending[~ok]
    return out


def _small_omega(lam, omega, rng):
    # three-piece envelope: constant on (0, x0), power on (x0, 2/omega), exponential tail
    xm = _mode(lam, omega)
    x0 = omega / (1.0 - lam)
    k0 = np.exp((lam - 1.0) * np.log(xm) - 0.5 * omega * (xm + 1.0 / xm))
    A0 = k0 * x0
    far = x0 >= 2.0 / omega
    lam_zero = lam == 0.0
    safe_lam = np.where(lam_zero, 1.0, lam)

    k1 = np.where(far, 0.0, np.exp(-omega))
    with np.errstate(divide="ignore", invalid="ignore"):
        A1_pow = k1 / safe_lam * ((2.0 / omega) ** lam - x0 ** lam)
        A1_log = k1 * np.log(2.0 / (omega * omega))
    A1 = np.where(far, 0.0, np.where(lam_zero, A1_log, A1_pow))
    k2 = np.where(far, x0 ** (lam - 1.0), (2.0 / omega) ** (lam - 1.0))
    A2 = np.where(far, k2 * 2.0 * np.exp(-omega * x0 / 2.0) / omega, k2 * 2.0 * np.exp(-1.0) / omega)
    Atot = A0 + A1 + A2
    tail_start = np.maximum(x0, 2.0 / omega)

    out = np.empty_like(lam)
    pending = np.arange(lam.size)
    while pending.size:
        n = pending.size
        la, om = lam[pending], omega[pending]
        a0, a1, kk0, kk1, kk2 = A0[pending], A1[pending], k0[pending], k1[pending], k2[pending]
        v = Atot[pending] * rng.random(n)
        x = np.empty(n)
        hx = np.empty(n)

        seg0 = v <= a0
        x[seg0] = x0[pending][seg0] * v[seg0] / a0[seg0]
        hx[seg0] = kk0[seg0]

        v1 = v - a0
        seg1 = ~seg0 & (v1 <= a1)
        z = seg1 & (la == 0.0)
        x[z] = om[z] * np.exp(np.exp(om[z]) * v1[z])
        hx[z] = kk1[z] / x[z]
        nz = seg1 & (la != 0.0)
        x[nz] = (x0[pending][nz] ** la[nz] + la[nz] / kk1[nz] * v1[nz]) ** (1.0 / la[nz])
        hx[nz] = kk1[nz] * x[nz] ** (la[nz] - 1.0)

        seg2 = ~seg0 & ~seg1
        v2 = v1 - a1
        with np.errstate(divide="ignore", invalid="ignore"):
            inner = np.exp(-om[seg2] / 2.0 * tail_start[pending][seg2]) - om[seg2] / (2.0 * kk2[seg2]) * v2[seg2]
            x[seg2] = -2.0 / om[seg2] * np.log(inner)
        hx[seg2] = kk2[seg2] * np.exp(-om[seg2] / 2.0 * x[seg2])

        u = rng.random(n) * hx
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = np.isfinite(x) & (x > 0.0) & (
                np.log(u) <= (la - 1.0) * np.log(x) - om / 2.0 * (x + 1.0 / x))
        out[pending[ok]] = x[ok]
        pending = pending[~ok]
    return out


def _standard_gig(lam, omega, rng):
    """Draw from density ~ y^(lam-1) exp(-omega/2 (y + 1/y)), lam >= 0."""
    out = np.empty_like(lam)
    shift = (lam > 2.0) | (omega > 3.0)
    noshift = ~shift & ((lam >= 1.0 - 2.25 * omega * omega) | (omega > 0.2))
    small = ~shift & ~noshift
    for mask, sampler in ((shift, _rou_shift), (noshift, _rou_noshift), (small, _small_omega)):
        if np.any(mask):
            out[mask] = sampler(lam[mask], omega[mask], rng)
    return out


def check_gig_parameters(lam, chi, psi) -> None:
    lam, chi, psi = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (lam, chi, psi)))
    if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(chi)) and np.all(np.isfinite(psi))):
        raise GIGParameterError("GIG parameters must be finite")
    if np.any(chi < 0) or np.any(psi < 0):
        raise GIGParameterError("GIG requires chi >= 0 and psi >= 0")
    if np.any((chi == 0) & (lam <= 0)):
        raise GIGParameterError("GIG with chi = 0 requires lambda > 0")
    if np.any((psi == 0) & (lam >= 0)):
        raise GIGParameterError("GIG with psi = 0 requires lambda < 0")


def draw_gig(lam, chi, psi, rng: np.random.Generator, size=None):
    """
    Draw GIG(lam, chi, psi) variates.

    Parameters broadcast against each other (and against ``size`` when
    given). ``chi = 0`` reduces to Gamma(lam, rate psi/2) and ``psi = 0`` to
    inverse-Gamma(-lam, scale chi/2). Returns a float for scalar input.
    """
    check_gig_parameters(lam, chi, psi)
    shape = np.broadcast_shapes(np.shape(lam), np.shape(chi), np.shape(psi))
    if size is not None:
        shape = np.broadcast_shapes(shape, (size,) if np.isscalar(size) else tuple(size))
    lam_a = np.broadcast_to(np.asarray(lam, dtype=float), shape).ravel()
    chi_a = np.broadcast_to(np.asarray(chi, dtype=float), shape).ravel()
    psi_a = np.broadcast_to(np.asarray(psi, dtype=float), shape).ravel()
    out = np.empty(lam_a.size)

    gamma_case = chi_a == 0
    inv_case = psi_a == 0
    general = ~gamma_case & ~inv_case
    if np.any(gamma_case):
        out[gamma_case] = rng.gamma(lam_a[gamma_case], 2.0 / psi_a[gamma_case])
    if np.any(inv_case):
        out[inv_case] = (chi_a[inv_case] / 2.0) / rng.gamma(-lam_a[inv_case], 1.0)
    if np.any(general):
        la = lam_a[general]
        omega = np.sqrt(chi_a[general] * psi_a[general])
        alpha = np.sqrt(chi_a[general] / psi_a[general])
        y = _standard_gig(np.abs(la), omega, rng)
        out[general] = np.where(la < 0, alpha / y, alpha * y)

    if shape == ():
        return float(out[0])
    return out.reshape(shape)


def gig_log_density(x, lam, chi, psi):
    """Unnormalized log density."""
    x = np.asarray(x, dtype=float)
    return (lam - 1.0) * np.log(x) - 0.5 * (chi / x + psi * x)
