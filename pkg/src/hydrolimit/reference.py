"""Independent reference evaluations of the collision integrals.

These routines compute L[f] and Gamma[f, g] straight from the symmetrized
collision-integral definition with their own quadrature (tensor Gauss in u,
product rule on the sphere for omega), for *analytic* test functions.  They
share no code or precomputed data with the assembled operators and exist so
the tests can check the matrix pipeline against the defining integrals.
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial.legendre import leggauss


def _mu(v2):
    return (2.0 * np.pi) ** -1.5 * np.exp(-0.5 * v2)


def _u_grid(n, umax):
    x, w = leggauss(n)
    x = umax * x
    w = umax * w
    U = np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1).reshape(-1, 3)
    W = (w[:, None, None] * w[None, :, None] * w[None, None, :]).reshape(-1)
    return U, W


def _omega_rule(n_t, n_phi):
    t, wt = leggauss(n_t)
    ph = (np.arange(n_phi) + 0.5) * 2.0 * np.pi / n_phi
    wph = np.full(n_phi, 2.0 * np.pi / n_phi)
    st = np.sqrt(1.0 - t**2)
    Om = np.stack([
        np.repeat(st, n_phi) * np.tile(np.cos(ph), n_t),
        np.repeat(st, n_phi) * np.tile(np.sin(ph), n_t),
        np.repeat(t, n_phi),
    ], axis=-1)
    W = np.repeat(wt, n_phi) * np.tile(wph, n_t)
    return Om, W


def qstar(F, G, v, q0=1.0, n_u=32, n_t=24, n_phi=24, umax=7.5):
    """Q*[F, G](v) for callables F, G acting on (..., 3) arrays."""
    v = np.asarray(v, dtype=float)
    U, WU = _u_grid(n_u, umax)
    Om, WOm = _omega_rule(n_t, n_phi)
    total = 0.0
    for lo in range(0, len(U), 2048):
        u = U[lo:lo + 2048]
        wu = WU[lo:lo + 2048]
        w = u[:, None, :] - v[None, None, :]
        t = np.einsum("uoj,oj->uo", np.broadcast_arrays(w, Om[None])[0], Om)
        q = q0 * np.abs(t)
        vs = v[None, None, :] + Om[None, :, :] * t[..., None]
        us = u[:, None, :] - Om[None, :, :] * t[..., None]
        val = (F(us) * G(vs) + F(vs) * G(us)
               - F(u)[:, None] * G(v[None, :])[None, :]
               - F(v[None, :])[None, :] * G(u)[:, None])
        total += np.einsum("u,o,uo->", wu, WOm, q * val)
    return 0.5 * total


def apply_L_direct(f, v, q0=1.0, **kw):
    """L[f](v) = -2 mu^{-1/2} Q*[mu, mu^{1/2} f] for an analytic f."""
    def F(x):
        return _mu(np.sum(x * x, axis=-1))

    def G(x):
        return np.sqrt(_mu(np.sum(x * x, axis=-1))) * f(x)

    v = np.asarray(v, dtype=float)
    return -2.0 * qstar(F, G, v, q0=q0, **kw) / np.sqrt(_mu(v @ v))


def gamma_direct(f, g, v, q0=1.0, **kw):
    """Gamma[f, g](v) = mu^{-1/2} Q*[mu^{1/2} f, mu^{1/2} g]."""
    def F(x):
        return np.sqrt(_mu(np.sum(x * x, axis=-1))) * f(x)

    def G(x):
        return np.sqrt(_mu(np.sum(x * x, axis=-1))) * g(x)

    v = np.asarray(v, dtype=float)
    return qstar(F, G, v, q0=q0, **kw) / np.sqrt(_mu(v @ v))
