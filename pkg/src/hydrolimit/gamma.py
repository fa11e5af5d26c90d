"""Bilinear collision operator Gamma[f, g] = mu^{-1/2} Q*[mu^{1/2} f, mu^{1/2} g].

Both arguments are expanded in a fixed Maxwellian-weighted polynomial family
(modal truncation); the pair interactions Gamma[phi_a, phi_b] are then exact
Gaussian-polynomial collision integrals, evaluated once per grid with a
quadrature that is exact for the polynomial degrees involved:

* the u integral runs in spherical coordinates around the output node, so
  the |u - v| factor is polynomial there;
* the omega integral uses a per-hemisphere Gauss rule in t = omega . what
  and a uniform rule in the azimuth, which integrates |omega . w| times the
  post-collision polynomials exactly.

The assembled pair table is symmetrized and projected orthogonal to the
hydrodynamic basis, so P[Gamma[f, g]] = 0 holds to machine precision for all
arguments, and Gamma[mu^{1/2}, mu^{1/2}] = 0 pointwise by the collision
invariants.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from .collision import cache_dir
from .velocity import VelocityGrid


@dataclass(frozen=True)
class GammaOrders:
    degree: int = 6      # max polynomial degree of the modal family
    n_r: int = 16
    n_theta: int = 12
    n_phi: int = 8
    n_t: int = 14        # omega rule, per hemisphere in t
    n_beta: int = 16

    def key(self):
        return (f"{self.degree}|{self.n_r}x{self.n_theta}x{self.n_phi}"
                f"|{self.n_t}x{self.n_beta}")


def _monomials_reduced(degree):
    out = []
    for a in range(degree + 1):
        for b in range((degree - a) // 2 + 1):
            out.append((a, b))           # v_eta^a * (v_perp^2)^b
    return out


def _monomials_full(degree):
    out = []
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            for c in range(degree + 1 - a - b):
                out.append((a, b, c))
    return out


def _eval_monomials_reduced(points, monos):
    veta = points[..., 0]
    p2 = points[..., 1] ** 2 + points[..., 2] ** 2
    cols = [veta**a * p2**b for a, b in monos]
    return np.stack(cols, axis=-1)


def _eval_monomials_full(points, monos):
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    return np.stack([x**a * y**b * z**c for a, b, c in monos], axis=-1)


class GammaOperator:
    """Modal bilinear collision operator on a velocity grid."""

    def __init__(self, grid, q0=1.0, orders=None, cache=True):
        self.grid = grid
        self.q0 = float(q0)
        if orders is None:
            orders = GammaOrders() if grid.mode == "reduced" \
                else GammaOrders(degree=3, n_theta=10, n_phi=8)
        self.orders = orders
        if grid.mode == "reduced":
            self.monos = _monomials_reduced(orders.degree)
            self._eval_monos = _eval_monomials_reduced
        else:
            self.monos = _monomials_full(orders.degree)
            self._eval_monos = _eval_monomials_full
        self.basis, self.coef = self._orthonormal_modes()
        self.table = self._load_table(cache)

    @property
    def n_modes(self):
        return self.basis.shape[1]

    def _node_points(self):
        g = self.grid
        if g.mode == "reduced":
            return np.stack([g.nodes[:, 0], g.nodes[:, 1],
                             np.zeros(g.n)], axis=-1)
        return g.nodes

    def _orthonormal_modes(self):
        g = self.grid
        pts = self._node_points()
        M = self._eval_monos(pts, self.monos) * g.sqrt_mu[:, None]
        # weighted QR: columns orthonormal under the grid measure
        W = np.sqrt(g.weights)[:, None]
        Q, R = np.linalg.qr(W * M)
        basis = Q / W
        coef = np.linalg.inv(R)    # H_k = sum_m coef[m, k] * mono_m
        return basis, coef

    def coeffs(self, f):
        """Modal coefficients of (stacks of) grid functions."""
        return np.einsum("vk,...v->...k",
                         self.basis * self.grid.weights[:, None], np.asarray(f))

    def reconstruct(self, c):
        return np.einsum("...k,vk->...v", np.asarray(c), self.basis)

    def apply(self, f, g):
        """Gamma[f, g] for fields shaped (..., n)."""
        cf = self.coeffs(f)
        cg = self.coeffs(g)
        return np.einsum("vab,...a,...b->...v", self.table, cf, cg)

    def apply_fixed(self, f):
        """Matrix of the linear map Gamma[f, .] for a single field f (n,)."""
        cf = self.coeffs(f)
        T = np.einsum("vab,a->vb", self.table, cf)
        return T @ (self.basis * self.grid.weights[:, None]).T

    # -- assembly -------------------------------------------------------------
    def _load_table(self, cache):
        key = hashlib.sha256(
            f"G|{self.grid.spec.key()}|{self.q0:.12g}|{self.orders.key()}"
            .encode()).hexdigest()[:24]
        path = os.path.join(cache_dir(), key + ".npz")
        if cache and os.path.exists(path):
            with np.load(path) as z:
                return z["T"]
        T = self._assemble()
        if cache:
            tmp = path[:-4] + f".tmp{os.getpid()}.npz"
            np.savez_compressed(tmp, T=T)
            os.replace(tmp, path)
        return T

    def _omega_rule(self):
        o = self.orders
        t, wt = leggauss(o.n_t)
        t = 0.5 * (t + 1.0)
        wt = wt                     # scaled below; factor 2 for the two signs
        beta = (np.arange(o.n_beta) + 0.5) * 2.0 * np.pi / o.n_beta
        wbeta = 2.0 * np.pi / o.n_beta
        return t, 0.5 * wt * 2.0, beta, wbeta

    def _assemble(self):
        g = self.grid
        o = self.orders
        q0 = self.q0
        M = self.n_modes
        nodes3 = self._node_points()

        ct, wct = leggauss(o.n_theta)
        st = np.sqrt(1.0 - ct**2)
        ph = (np.arange(o.n_phi) + 0.5) * 2.0 * np.pi / o.n_phi
        dirs = np.stack([
            np.repeat(ct, o.n_phi),
            np.repeat(st, o.n_phi) * np.tile(np.cos(ph), o.n_theta),
            np.repeat(st, o.n_phi) * np.tile(np.sin(ph), o.n_theta),
        ], axis=-1)
        wdir = np.repeat(wct, o.n_phi) * (2.0 * np.pi / o.n_phi)
        xr_ref, wr_ref = leggauss(o.n_r)

        tq, wtq, beta, wbeta = self._omega_rule()
        cb, sb = np.cos(beta), np.sin(beta)

        # orthonormal frame (e1, e2) transverse to each direction
        e1 = np.zeros_like(dirs)
        smallest = np.argmin(np.abs(dirs), axis=1)
        e1[np.arange(len(dirs)), smallest] = 1.0
        e1 -= dirs * np.sum(e1 * dirs, axis=1, keepdims=True)
        e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
        e2 = np.cross(dirs, e1)

        # unit collision directions omega(w-hat, t, beta), shape (na, nt, nb, 3)
        s_t = np.sqrt(np.maximum(1.0 - tq**2, 0.0))
        om = (tq[None, :, None, None] * dirs[:, None, None, :]
              + s_t[None, :, None, None]
              * (cb[None, None, :, None] * e1[:, None, None, :]
                 + sb[None, None, :, None] * e2[:, None, None, :]))
        na = len(dirs)
        ntb = len(tq) * len(beta)
        om_flat = om.reshape(na, ntb, 3)
        t_flat = np.repeat(tq, len(beta))
        wt_flat = np.repeat(wtq, len(beta)) * wbeta

        T = np.zeros((g.n, M, M))
        mu_c = (2.0 * np.pi) ** -1.5
        for i in range(g.n):
            v = nodes3[i]
            Hv = (self._eval_monos(v[None, :], self.monos) @ self.coef)[0]
            rmax = min(np.linalg.norm(v) + 9.0, 16.0)
            r = 0.5 * rmax * (xr_ref + 1.0)
            wr = 0.5 * rmax * wr_ref

            gain = np.zeros((M, M))
            loss_vec = np.zeros(M)
            for ir in range(o.n_r):
                rr = r[ir]
                u = v[None, :] + rr * dirs               # (na, 3)
                mu_u = mu_c * np.exp(-0.5 * np.sum(u * u, axis=-1))
                cu = wr[ir] * rr * rr * wdir * mu_u       # u-quadrature coeff
                Hu = self._eval_monos(u, self.monos) @ self.coef
                loss_vec += (2.0 * np.pi * q0 * rr) * (cu @ Hu)

                rtom = rr * t_flat[None, :, None] * om_flat    # (na, ntb, 3)
                vstar = v[None, None, :] + rtom
                ustar = u[:, None, :] - rtom
                Hvs = (self._eval_monos(vstar.reshape(-1, 3), self.monos)
                       @ self.coef)
                Hus = (self._eval_monos(ustar.reshape(-1, 3), self.monos)
                       @ self.coef)
                cw = (q0 * rr * t_flat[None, :] * wt_flat[None, :]
                      * cu[:, None]).reshape(-1)
                G1 = Hus.T @ (Hvs * cw[:, None])
                gain += G1 + G1.T

            bracket = 0.5 * (gain
                             - loss_vec[:, None] * Hv[None, :]
                             - Hv[:, None] * loss_vec[None, :])
            T[i] = g.sqrt_mu[i] * bracket
        # enforce pair symmetry and orthogonality to the hydrodynamic basis
        T = 0.5 * (T + np.transpose(T, (0, 2, 1)))
        flat = T.reshape(g.n, -1)
        flat = flat - g.null_basis @ (g.null_basis.T * g.weights[None, :]) @ flat
        return flat.reshape(g.n, M, M)


def gamma_bilinear(op_gamma, f, g):
    """Module-level convenience wrapper around GammaOperator.apply."""
    return op_gamma.apply(f, g)
