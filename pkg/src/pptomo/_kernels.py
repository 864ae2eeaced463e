"""Hot loops, each with a numba implementation and a numpy fallback.

The compiled path is used unless ``PPTOMO_DISABLE_NUMBA`` is set (see
:func:`pptomo.constants.numba_enabled`); both paths must agree to rounding.
"""

import numpy as np

from .constants import numba_enabled

try:
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None


# --- pump second-order density matrix -----------------------------------------
#
# rho(t) = int_{-inf}^t ds G(t - s) X(s), X = V c^+ + c V^+, with V(s) = i E(s) mu
# and c(s) = int_{-inf}^s du exp(-C (s - u)) V(u). Both integrals use the
# trapezoid rule on the kick grid plus the leading Euler-Maclaurin end term,
# which makes the scheme fourth order in dt at output times on the grid.

ALIGN_TOL = 1e-7  # fs


def _second_order_np(fields_ket, dfields_ket, fields_bra, dfields_bra, t0, dt, mu, c_rate,
                     coh_rate, pop_V, pop_lam, pop_Vinv, out_times, hermitian=True):
    """Kick-grid evaluation of the second-order excited-state matrix.

    Vectorized over members; loops over kicks in python.

    fields_* : (K,) complex, dt * E(t_k) in the rotating frame; dfields_* the
        matching dt * dE/dt. The ket field acts last.
    mu : (N, n, P) real, pump-projected <a|mu^+|g> for P polarizations
    c_rate : (N, n) complex, i*detuning + gamma of |a><g| (fs^-1)
    coh_rate : (N, n, n) complex, i*w_ab + gamma_ab of |a><b| (zero diagonal)
    pop_V, pop_lam, pop_Vinv : eigendecomposition of the population generator^T
    out_times : (M,) ascending
    hermitian : return Y + Y^+ (pump-probe) instead of the single ordering Y
    returns rho (N, M, n, n) complex
    """
    N, n, P = mu.shape
    M = out_times.size
    K = fields_ket.size
    Y = np.zeros((N, n, n), complex)
    cfull = np.zeros((N, n, P), complex)
    out = np.zeros((N, M, n, n), complex)
    c_step = np.exp(-c_rate * dt)[:, :, None]
    coh_step = np.exp(-coh_rate * dt)
    pop_gen = np.einsum("nab,nb,nbc->nac", pop_V, pop_lam, pop_Vinv).real
    pop_step = np.einsum("nab,nb,nbc->nac", pop_V, np.exp(pop_lam * dt), pop_Vinv).real
    diag = np.arange(n)
    C = c_rate[:, :, None]

    def evolve(r, tau, step=None):
        r = r * (np.exp(-coh_rate * tau) if step is None else step)
        if step is None:
            prop = np.einsum("nab,nb,nbc->nac", pop_V, np.exp(pop_lam * tau), pop_Vinv).real
        else:
            prop = pop_step
        r[:, diag, diag] = np.einsum("nab,nb->na", prop, r[:, diag, diag].real)
        return r

    def generator(r):
        g = -coh_rate * r
        g[:, diag, diag] = np.einsum("nab,nb->na", pop_gen, r[:, diag, diag].real)
        return g

    def outer(a, b):
        return np.einsum("nap,nbp->nab", a, b.conj()) / P

    j = 0
    while j < M and out_times[j] < t0 - ALIGN_TOL:
        j += 1
    for k in range(K):
        tk = t0 + k * dt
        if k:
            Y = evolve(Y, dt, coh_step)
            cfull = cfull * c_step
        vb = 1j * fields_bra[k] * mu
        cfull = cfull + vb
        chat = cfull - 0.5 * vb - dt * (1j * dfields_bra[k] * mu + C * vb) / 12
        vk = 1j * fields_ket[k] * mu
        Ydt = outer(vk, chat)
        Y = Y + Ydt
        t_next = tk + dt if k + 1 < K else np.inf
        if j < M and out_times[j] < t_next - ALIGN_TOL:
            # end corrections: Y' = V' c^+ + V c'^+ with c' = V_bra - C c
            A = dt * outer(1j * dfields_ket[k] * mu, chat) + outer(vk, vb - dt * C * chat)
            here = Y - 0.5 * Ydt - (A - dt * generator(Ydt)) / 12
            if hermitian:
                here = here + here.conj().transpose(0, 2, 1)
            while j < M and out_times[j] < t_next - ALIGN_TOL:
                tau = out_times[j] - tk
                out[:, j] = here if abs(tau) <= ALIGN_TOL else evolve(here.copy(), tau)
                j += 1
    return out


if njit is not None:
    @njit(cache=True)
    def _evolve_nb(r, tau, coh_rate, V, lam, Vinv, out):
        n = r.shape[0]
        for a in range(n):
            for b in range(n):
                if a != b:
                    out[a, b] = r[a, b] * np.exp(-coh_rate[a, b] * tau)
        for a in range(n):
            acc = 0.0
            for b in range(n):
                w = 0.0 + 0.0j
                for m in range(n):
                    w += V[a, m] * np.exp(lam[m] * tau) * Vinv[m, b]
                acc += w.real * r[b, b].real
            out[a, a] = acc

    @njit(cache=True)
    def _step_nb(r, coh_step, pop_step, out):
        n = r.shape[0]
        for a in range(n):
            acc = 0.0
            for b in range(n):
                if a != b:
                    out[a, b] = r[a, b] * coh_step[a, b]
                acc += pop_step[a, b] * r[b, b].real
            out[a, a] = acc

    @njit(cache=True)
    def _pump_second_order_nb(fields, dfields, t0, dt, mu, c_rate, coh_rate, pop_V, pop_lam,
                              pop_Vinv, out_times):
        N, n, P = mu.shape
        M = out_times.size
        K = fields.size
        out = np.zeros((N, M, n, n), np.complex128)
        X = np.zeros((n, n), np.complex128)
        tmp = np.zeros((n, n), np.complex128)
        here = np.zeros((n, n), np.complex128)
        cfull = np.zeros((n, P), np.complex128)
        chat = np.zeros((n, P), np.complex128)
        v = np.zeros((n, P), np.complex128)
        dv = np.zeros((n, P), np.complex128)
        cdot = np.zeros((n, P), np.complex128)
        c_step = np.zeros(n, np.complex128)
        coh_step = np.zeros((n, n), np.complex128)
        pop_step = np.zeros((n, n))
        pop_gen = np.zeros((n, n))
        j0 = 0
        while j0 < M and out_times[j0] < t0 - ALIGN_TOL:
            j0 += 1
        for s in range(N):
            # one-kick propagators, reused for every step of this member
            for a in range(n):
                c_step[a] = np.exp(-c_rate[s, a] * dt)
                for b in range(n):
                    coh_step[a, b] = np.exp(-coh_rate[s, a, b] * dt)
                    w = 0.0 + 0.0j
                    g = 0.0 + 0.0j
                    for m in range(n):
                        w += pop_V[s, a, m] * np.exp(pop_lam[s, m] * dt) * pop_Vinv[s, m, b]
                        g += pop_V[s, a, m] * pop_lam[s, m] * pop_Vinv[s, m, b]
                    pop_step[a, b] = w.real
                    pop_gen[a, b] = g.real
            X[:, :] = 0.0
            cfull[:, :] = 0.0
            j = j0
            for k in range(K):
                tk = t0 + k * dt
                if k:
                    _step_nb(X, coh_step, pop_step, tmp)
                    X[:, :] = tmp
                    for a in range(n):
                        for p in range(P):
                            cfull[a, p] *= c_step[a]
                for a in range(n):
                    for p in range(P):
                        v[a, p] = 1j * fields[k] * mu[s, a, p]
                        dv[a, p] = 1j * dfields[k] * mu[s, a, p]
                        cfull[a, p] += v[a, p]
                        chat[a, p] = (cfull[a, p] - 0.5 * v[a, p]
                                      - dt * (dv[a, p] + c_rate[s, a] * v[a, p]) / 12.0)
                        cdot[a, p] = v[a, p] - dt * c_rate[s, a] * chat[a, p]
                # Xdt = V c^+ + c V^+ (times dt), kept in tmp for the end correction
                for a in range(n):
                    for b in range(n):
                        acc = 0.0 + 0.0j
                        for p in range(P):
                            acc += v[a, p] * np.conj(chat[b, p]) + chat[a, p] * np.conj(v[b, p])
                        tmp[a, b] = acc / P
                        X[a, b] += tmp[a, b]
                t_next = tk + dt if k + 1 < K else np.inf
                if j < M and out_times[j] < t_next - ALIGN_TOL:
                    for a in range(n):
                        for b in range(n):
                            acc = 0.0 + 0.0j
                            for p in range(P):
                                acc += (dt * (dv[a, p] * np.conj(chat[b, p])
                                              + chat[a, p] * np.conj(dv[b, p]))
                                        + v[a, p] * np.conj(cdot[b, p])
                                        + cdot[a, p] * np.conj(v[b, p]))
                            acc /= P
                            if a != b:
                                gen = -coh_rate[s, a, b] * tmp[a, b]
                            else:
                                gen = 0.0 + 0.0j
                                for m in range(n):
                                    gen += pop_gen[a, m] * tmp[m, m].real
                            here[a, b] = X[a, b] - 0.5 * tmp[a, b] - (acc - dt * gen) / 12.0
                    while j < M and out_times[j] < t_next - ALIGN_TOL:
                        tau = out_times[j] - tk
                        if abs(tau) <= ALIGN_TOL:
                            out[s, j] = here
                        else:
                            _evolve_nb(here, tau, coh_rate[s], pop_V[s], pop_lam[s],
                                       pop_Vinv[s], out[s, j])
                        j += 1
        return out


def pump_second_order_kernel(fields, dfields, t0, dt, mu, c_rate, coh_rate, pop_V, pop_lam,
                             pop_Vinv, out_times, use_numba=None):
    """Hermitian (pump-probe) second-order matrix (N, M, n, n); see :func:`_second_order_np`."""
    use = numba_enabled() if use_numba is None else use_numba
    if use and njit is not None:
        return _pump_second_order_nb(fields, dfields, t0, dt, mu, c_rate, coh_rate, pop_V,
                                     pop_lam, pop_Vinv, out_times)
    return _second_order_np(fields, dfields, fields, dfields, t0, dt, mu, c_rate, coh_rate,
                            pop_V, pop_lam, pop_Vinv, out_times, hermitian=True)


def second_order_single(fields_ket, dfields_ket, fields_bra, dfields_bra, t0, dt, mu, c_rate,
                        coh_rate, pop_V, pop_lam, pop_Vinv, out_times):
    """Single time ordering (ket field after bra field); numpy only."""
    return _second_order_np(fields_ket, dfields_ket, fields_bra, dfields_bra, t0, dt, mu, c_rate,
                            coh_rate, pop_V, pop_lam, pop_Vinv, out_times, hermitian=False)


# --- Liouville pathway sums ---------------------------------------------------

def _pathways_np(mu_g1, mu_12, F, Fp, pol):
    """Response of every |a><b| for each polarization pair (lineshape form).

    mu_g1 (n, 3), mu_12 (n, n2, 3), F (n, W), Fp (n, n2, W), pol (Q, 2, 3)
    with pol[q, 0] the probe and pol[q, 1] the signal polarization.
    Returns (Q, n, n, W) complex.
    """
    n = mu_g1.shape[0]
    gp = pol[:, 0] @ mu_g1.T  # (Q, n)
    gs = pol[:, 1] @ mu_g1.T
    out = -np.einsum("qb,qa,aw->qabw", gp, gs, F).astype(complex)
    gsb = np.einsum("qc,qc,cw->qw", gp, gs, F)
    idx = np.arange(n)
    out[:, idx, idx, :] -= gsb[:, None, :]
    if mu_12.shape[1]:
        ep = np.einsum("qx,afx->qaf", pol[:, 0], mu_12)
        es = np.einsum("qx,bfx->qbf", pol[:, 1], mu_12)
        out += np.einsum("qaf,qbf,bfw->qabw", ep, es, Fp)
    return out


if njit is not None:
    @njit(cache=True)
    def _pathways_nb(mu_g1, mu_12, F, Fp, pol):
        n = mu_g1.shape[0]
        n2 = mu_12.shape[1]
        W = F.shape[1]
        Q = pol.shape[0]
        out = np.zeros((Q, n, n, W), np.complex128)
        gp = np.zeros(n)
        gs = np.zeros(n)
        ep = np.zeros((n, n2))
        es = np.zeros((n, n2))
        for q in range(Q):
            for a in range(n):
                gp[a] = 0.0
                gs[a] = 0.0
                for x in range(3):
                    gp[a] += pol[q, 0, x] * mu_g1[a, x]
                    gs[a] += pol[q, 1, x] * mu_g1[a, x]
                for f in range(n2):
                    ep[a, f] = 0.0
                    es[a, f] = 0.0
                    for x in range(3):
                        ep[a, f] += pol[q, 0, x] * mu_12[a, f, x]
                        es[a, f] += pol[q, 1, x] * mu_12[a, f, x]
            for w in range(W):
                gsb = 0.0 + 0.0j
                for c in range(n):
                    gsb += gp[c] * gs[c] * F[c, w]
                for a in range(n):
                    for b in range(n):
                        acc = -gp[b] * gs[a] * F[a, w]
                        for f in range(n2):
                            acc += ep[a, f] * es[b, f] * Fp[b, f, w]
                        if a == b:
                            acc -= gsb
                        out[q, a, b, w] = acc
        return out


def pathways(mu_g1, mu_12, F, Fp, pol, use_numba=None):
    use = numba_enabled() if use_numba is None else use_numba
    if use and njit is not None:
        return _pathways_nb(np.ascontiguousarray(mu_g1, dtype=float),
                            np.ascontiguousarray(mu_12, dtype=float).reshape(
                                mu_g1.shape[0], -1, 3),
                            np.ascontiguousarray(F, dtype=complex),
                            np.ascontiguousarray(Fp, dtype=complex).reshape(
                                mu_g1.shape[0], -1, F.shape[1]),
                            np.ascontiguousarray(pol, dtype=float))
    return _pathways_np(mu_g1, mu_12, F, Fp, pol)
