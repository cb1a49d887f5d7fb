"""Restoring channels on the extended receiver and the constraint solver.

A restoring channel is a set of excitation-preserving Kraus operators acting on
the extended receiver ER. Each operator is block diagonal over the ER
excitation sectors 0..k; for k = 1 that is a ground-state scalar c_p and an
N_ER x N_ER block.

After the channel, the receiver block of the chain state should read
``nu * I + lam * rho_S(0)`` for every sender state. ``T`` is the linear map from
sender matrix units to the restored chain state; the restoring conditions are
equations on its entries.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .lsq import levenberg_marquardt
from .sector_basis import SectorBasis

ACCEPT_RESIDUAL = 1e-9
COMPLETENESS_TOL = 1e-6


class ChannelError(ValueError):
    pass


class SolverFailure(RuntimeError):
    def __init__(self, message: str, best_residual: float):
        super().__init__(message)
        self.best_residual = best_residual


# --------------------------------------------------------------------------
# chain <-> (outside part, ER part) bookkeeping


@dataclass(frozen=True)
class ERLayout:
    """Split of each chain state into an S+TL' configuration id and an ER local index."""

    out_id: np.ndarray  # (dim,)
    er_id: np.ndarray  # (dim,)
    n_out: int
    d: int  # number of ER local states (sectors 0..k)
    sectors: tuple  # ER local indices grouped by excitation number

    @classmethod
    def of(cls, basis: SectorBasis) -> "ERLayout":
        pairs = [(int(i_s), int(i_t)) for i_s, i_t, _ in basis.multi_index]
        ids: dict = {}
        out = np.array([ids.setdefault(p, len(ids)) for p in pairs], dtype=int)
        er = basis.multi_index[:, 2].astype(int)
        d = len(basis.local_ER)
        exc = np.array([len(s) for s in basis.local_ER])
        sectors = tuple(np.flatnonzero(exc == j) for j in range(exc.max() + 1))
        return cls(out_id=out, er_id=er, n_out=len(ids), d=d, sectors=sectors)

    @property
    def mask(self) -> np.ndarray:
        """(d, d) True where an ER operator may be nonzero (same sector)."""
        m = np.zeros((self.d, self.d), dtype=bool)
        for s in self.sectors:
            m[np.ix_(s, s)] = True
        return m

    def extend(self, U_cols: np.ndarray) -> np.ndarray:
        """rho_s[(o1, a), (o2, b)] as an array (n_out, d, n_out, d, N_S, N_S)."""
        ns = U_cols.shape[2:]
        ext = np.zeros((self.n_out, self.d, self.n_out, self.d) + ns, dtype=complex)
        o, e = self.out_id, self.er_id
        ext[o[:, None], e[:, None], o[None, :], e[None, :]] = U_cols
        return ext


# --------------------------------------------------------------------------
# Kraus sets and the W map


@dataclass
class KrausSet:
    ops: np.ndarray  # (N_K, d, d) complex, zero across ER sectors
    sectors: tuple

    @property
    def N_K(self) -> int:
        return self.ops.shape[0]

    @property
    def d(self) -> int:
        return self.ops.shape[1]

    def completeness(self) -> np.ndarray:
        return np.einsum("pxa,pxb->ab", self.ops.conj(), self.ops)

    def completeness_error(self) -> float:
        return float(np.abs(self.completeness() - np.eye(self.d)).max())

    def block(self, sector: int) -> np.ndarray:
        s = self.sectors[sector]
        return self.ops[:, s[:, None], s[None, :]]

    def restoring_map(self) -> "RestoringMap":
        return RestoringMap(np.einsum("pxa,pyb->xyab", self.ops, self.ops.conj()))

    def lifted(self, layout: ERLayout) -> np.ndarray:
        """(N_K, dim, dim) operators I_{S,TL'} (x) K restricted to the chain sector."""
        o, e = layout.out_id, layout.er_id
        same = o[:, None] == o[None, :]
        return self.ops[:, e[:, None], e[None, :]] * same

    @classmethod
    def identity(cls, layout: ERLayout) -> "KrausSet":
        return cls(np.eye(layout.d, dtype=complex)[None], layout.sectors)

    @classmethod
    def random(cls, layout: ERLayout, N_K: int, rng: np.random.Generator) -> "KrausSet":
        """Complex Gaussian entries, then normalised per sector so sum K^H K = I."""
        n_er = len(layout.sectors[-1])
        scale = 1.0 / math.sqrt(2 * N_K * n_er)
        ops = (rng.standard_normal((N_K, layout.d, layout.d)) + 1j * rng.standard_normal((N_K, layout.d, layout.d))) * scale
        ops *= layout.mask
        return cls(ops, layout.sectors).normalized()

    def normalized(self) -> "KrausSet":
        """Right-multiply each sector block by S^{-1/2}, S = sum K^H K."""
        ops = self.ops.copy()
        for s in self.sectors:
            blk = ops[:, s[:, None], s[None, :]]
            S = np.einsum("pxa,pxb->ab", blk.conj(), blk)
            w, v = np.linalg.eigh(S)
            if w.min() <= 0:
                raise ChannelError("Kraus set is rank deficient on an ER sector")
            ops[:, s[:, None], s[None, :]] = blk @ ((v / np.sqrt(w)) @ v.conj().T)
        return KrausSet(ops, self.sectors)


@dataclass(frozen=True)
class RestoringMap:
    """W[x, y, a, b] = sum_p K_xa conj(K_yb) over ER local indices."""

    W: np.ndarray

    @property
    def d(self) -> int:
        return self.W.shape[0]

    def choi(self) -> np.ndarray:
        d = self.d
        return self.W.transpose(0, 2, 1, 3).reshape(d * d, d * d)

    def min_choi_eigenvalue(self) -> float:
        C = self.choi()
        return float(np.linalg.eigvalsh((C + C.conj().T) / 2).min())

    def partial_trace_error(self) -> float:
        tr = np.einsum("xxab->ab", self.W)
        return float(np.abs(tr - np.eye(self.d)).max())


def build_T(W: RestoringMap, U_cols: np.ndarray, basis: SectorBasis, layout: ERLayout | None = None) -> np.ndarray:
    """T[n, m, i_S, j_S] = sum_{a,b} W[n_ER, m_ER, a, b] rho_{i_S j_S}[(n_out, a), (m_out, b)]."""
    layout = layout or ERLayout.of(basis)
    if W.d != layout.d or U_cols.shape[:2] != (basis.dim, basis.dim):
        raise ChannelError("W / propagator dimensions do not match the basis")
    ext = layout.extend(U_cols)
    o, e = layout.out_id, layout.er_id
    Wnm = W.W[e[:, None], e[None, :]]  # (dim, dim, d, d)
    rho = ext[o[:, None], :, o[None, :], :]  # (dim, dim, d, d, NS, NS)
    return np.einsum("nmab,nmab...->nm...", Wnm, rho)


def apply_restore(rho: np.ndarray, kraus: KrausSet, basis: SectorBasis, layout: ERLayout | None = None) -> np.ndarray:
    """rho~ = sum_p (I (x) K_p) rho (I (x) K_p)^H on the chain sector."""
    err = kraus.completeness_error()
    if err > COMPLETENESS_TOL:
        raise ChannelError(f"Kraus set is not trace preserving (completeness error {err:.2e})")
    layout = layout or ERLayout.of(basis)
    Kf = kraus.lifted(layout)
    return np.einsum("pna,ab,pmb->nm", Kf, rho, Kf.conj())


# --------------------------------------------------------------------------
# Constraint systems


VARIANT_BLOCKS = {1: ("restore", "er_coherence", "outside_coherence"), 2: ("restore", "er_coherence"), 3: ("restore",)}


def _canonical(key):
    n, m, i, j = key
    partner = (m, n, j, i)
    return min(key, partner), key == partner


def condition_sets(basis: SectorBasis, variant: int) -> dict[str, list]:
    """Chain-index T conditions (n, m, i_S, j_S), one representative per conjugate pair."""
    if variant not in VARIANT_BLOCKS:
        raise ValueError(f"unknown restoring variant {variant}")
    R = list(basis.receiver_block)
    ns = len(basis.sender_block)
    er = list(basis.er_block)
    # ER sector states with receiver states first, as the extra constraints index them
    er_rfirst = R + [x for x in er if x not in R]
    N_R, N_ER = len(R), len(er)
    out: dict[str, list] = {}
    seen: set = set()

    def add(name, n, m, i, j):
        key, selfconj = _canonical((n, m, i, j))
        if key in seen:
            return
        seen.add(key)
        out.setdefault(name, []).append((key, selfconj))

    for rn, n in enumerate(R):
        for rm, m in enumerate(R):
            for i in range(ns):
                for j in range(ns):
                    add("restore", n, m, i, j)
    blocks = VARIANT_BLOCKS[variant]
    if "er_coherence" in blocks:
        for pn in range(0, N_ER - 1):
            for pm in range(N_R, N_ER):
                for i in range(ns):
                    for j in range(ns):
                        if (pn, i) != (pm, j):
                            add("er_coherence", er_rfirst[pn], er_rfirst[pm], i, j)
    if "outside_coherence" in blocks:
        for n in er:
            for m in range(basis.dim - N_ER):
                for i in range(ns):
                    for j in range(ns):
                        add("outside_coherence", n, m, i, j)
    return out


@dataclass
class RestoreProblem:
    """One restoring system: propagated sender columns at t0, variant, N_K, gamma0.

    Unknowns are the free Kraus entries (real and imaginary parts), then
    ``mu, nu, theta`` with ``lam = mu^2`` and admixture bound ``a = sin^2 theta``.
    """

    basis: SectorBasis
    U_cols: np.ndarray
    variant: int
    N_K: int
    gamma0: float
    layout: ERLayout = field(repr=False)
    blocks: dict = field(repr=False)
    x_idx: np.ndarray = field(repr=False)
    y_idx: np.ndarray = field(repr=False)
    M: np.ndarray = field(repr=False)
    coef_lam: np.ndarray = field(repr=False)
    coef_nu: np.ndarray = field(repr=False)
    selfconj: np.ndarray = field(repr=False)
    tp_pairs: np.ndarray = field(repr=False)

    def __post_init__(self):
        mask = self.layout.mask
        self._mask = np.broadcast_to(mask, (self.N_K,) + mask.shape)
        self._xe, self._ae = np.nonzero(mask)
        self._Sx = (self._xe[None, :] == self.x_idx[:, None]).astype(float)
        self._Sy = (self._xe[None, :] == self.y_idx[:, None]).astype(float)
        tpa, tpb = self.tp_pairs.T
        self._Ea = (self._ae[None, :] == tpa[:, None]).astype(float)
        self._Eb = (self._ae[None, :] == tpb[:, None]).astype(float)
        self._keep_im = ~self.selfconj
        self._tp_off = tpa != tpb
        self._build_reduced()

    def _linear_rows(self) -> tuple[np.ndarray, np.ndarray]:
        """Real matrix A and vector e with (raw residual minus the nu row) = A z - e.

        z = [Re w, Im w, lam, nu] where w[f, g] = sum_p K_p[f] conj(K_p[g]) over
        the free ER entries f, g. Every condition is linear in w, lam and nu.
        """
        xe, ae = self._xe, self._ae
        F = len(xe)
        C = len(self.x_idx)
        At = np.zeros((C, F, F), dtype=complex)
        hit = (xe[None, :, None] == self.x_idx[:, None, None]) & (xe[None, None, :] == self.y_idx[:, None, None])
        vals = self.M[:, ae[:, None], ae[None, :]]
        At[hit] = vals[hit]
        tpa, tpb = self.tp_pairs.T
        As = ((xe[:, None] == xe[None, :])[None] & (ae[None, :, None] == tpa[:, None, None]) & (ae[None, None, :] == tpb[:, None, None])).astype(complex)
        Ac = np.concatenate([At.reshape(C, F * F), As.reshape(len(tpa), F * F)])
        cl = np.concatenate([-self.coef_lam, np.zeros(len(tpa))])
        cn = np.concatenate([-self.coef_nu, np.zeros(len(tpa))])
        e = np.concatenate([np.zeros(C), (tpa == tpb).astype(float)])
        re = np.concatenate([Ac.real, -Ac.imag, cl[:, None], cn[:, None]], axis=1)
        im = np.concatenate([Ac.imag, Ac.real, np.zeros((len(cl), 2))], axis=1)
        ki, off = self._keep_im, self._tp_off
        rows = np.concatenate([re[:C], im[:C][ki], re[C:], im[C:][off]])
        rhs = np.concatenate([e[:C], np.zeros(ki.sum()), e[C:], np.zeros(off.sum())])
        return rows, rhs

    def _build_reduced(self):
        # Orthonormal rows spanning the same conditions. Coherences created only by
        # weak dephasing make the raw rows nearly dependent.
        A, e = self._linear_rows()
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
        r = int(np.sum(s > 1e-10 * s[0]))
        F = len(self._xe)
        Q = Vt[:r]
        self._red_G = (Q[:, : F * F] - 1j * Q[:, F * F : 2 * F * F]).reshape(r, F, F)
        self._red_Gf = self._red_G.reshape(r * F, F)
        self._red_Gt = np.ascontiguousarray(self._red_G.transpose(0, 2, 1)).reshape(r * F, F)
        self._red_lam = Q[:, -2]
        self._red_nu = Q[:, -1]
        self._red_rhs = (U[:, :r].T @ e) / s[:r]
        self._red_compat = float(np.abs(U[:, r:].T @ e).max()) if r < len(e) else 0.0

    @classmethod
    def build(cls, basis: SectorBasis, U_cols: np.ndarray, variant: int, N_K: int, gamma0: float) -> "RestoreProblem":
        layout = ERLayout.of(basis)
        blocks = condition_sets(basis, variant)
        ext = layout.extend(U_cols)
        rpos = {n: r for r, n in enumerate(basis.receiver_block)}
        keys = [kc for name in VARIANT_BLOCKS[variant] for kc in blocks.get(name, [])]
        C = len(keys)
        x = np.empty(C, dtype=int)
        y = np.empty(C, dtype=int)
        M = np.empty((C, layout.d, layout.d), dtype=complex)
        cl = np.zeros(C)
        cn = np.zeros(C)
        sc = np.zeros(C, dtype=bool)
        o, e = layout.out_id, layout.er_id
        for c, ((n, m, i, j), selfconj) in enumerate(keys):
            x[c], y[c] = e[n], e[m]
            M[c] = ext[o[n], :, o[m], :, i, j]
            sc[c] = selfconj
            if n in rpos and m in rpos:
                rn, rm = rpos[n], rpos[m]
                cl[c] = float(rn == i and rm == j)
                cn[c] = float(rn == rm and i == j)
        tp = np.array([(a, b) for s in layout.sectors for ia, a in enumerate(s) for b in s[ia:]], dtype=int)
        return cls(basis, U_cols, variant, N_K, float(gamma0), layout, blocks, x, y, M, cl, cn, sc, tp)

    @property
    def N_R(self) -> int:
        return len(self.basis.receiver_block)

    @property
    def n_kraus_params(self) -> int:
        return 2 * self.N_K * len(self._xe)

    def pack(self, kraus: KrausSet, lam: float, nu: float, a: float) -> np.ndarray:
        v = kraus.ops[self._mask]
        a = min(max(a, 0.0), 1.0)
        return np.concatenate([v.real, v.imag, [math.sqrt(max(lam, 0.0)), nu, math.asin(math.sqrt(a))]])

    def unpack(self, xv: np.ndarray):
        nk = self.n_kraus_params // 2
        ops = np.zeros(self._mask.shape, dtype=complex)
        ops[self._mask] = xv[:nk] + 1j * xv[nk : 2 * nk]
        mu, nu, th = xv[2 * nk :]
        return KrausSet(ops, self.layout.sectors), mu * mu, nu, math.sin(th) ** 2

    @property
    def n_restore_rows(self) -> int:
        return sum(1 if s else 2 for _, s in self.blocks["restore"])

    def restoring_equation_count(self) -> int:
        """Real restoring conditions after eliminating lam and nu (N_R^4 - 2)."""
        return self.n_restore_rows - 2

    def residual_and_jacobian(self, xv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        kraus, lam, nu, a = self.unpack(xv)
        K = kraus.ops
        nk = self.n_kraus_params // 2
        mu, th = xv[-3], xv[-1]
        ae = self._ae

        # T conditions: T_c = sum_p K[p, x_c, :] M_c K[p, y_c, :]^H
        Rr = K[:, self.x_idx, :]  # (P, C, d)
        G1 = np.einsum("cab,pcb->pca", self.M, K[:, self.y_idx, :].conj())
        G2 = np.einsum("pca,cab->pcb", Rr, self.M)
        T = np.einsum("pca,pca->c", Rr, G1)
        rT = T - lam * self.coef_lam - nu * self.coef_nu
        A1 = (G1[:, :, ae] * self._Sx).transpose(1, 0, 2).reshape(len(T), nk)
        A2 = (G2[:, :, ae] * self._Sy).transpose(1, 0, 2).reshape(len(T), nk)
        Jre = np.concatenate([(A1 + A2).real, (A2 - A1).imag, np.zeros((len(T), 3))], axis=1)
        Jre[:, -3] = -2 * mu * self.coef_lam
        Jre[:, -2] = -self.coef_nu
        ki = self._keep_im
        Jim = np.concatenate([(A1 + A2).imag[ki], (A1 - A2).real[ki], np.zeros((ki.sum(), 3))], axis=1)

        # completeness: sum_p K^H K - I, independent real entries
        tpa, tpb = self.tp_pairs.T
        S = np.einsum("pxa,pxb->ab", K.conj(), K)
        rS = S[tpa, tpb] - (tpa == tpb)
        Kx = K[:, self._xe, :]  # (P, F, d)
        B1 = (Kx[:, :, tpb].transpose(2, 0, 1) * self._Ea[:, None, :]).reshape(len(tpa), nk)
        B2 = (Kx[:, :, tpa].conj().transpose(2, 0, 1) * self._Eb[:, None, :]).reshape(len(tpa), nk)
        off = self._tp_off
        nt = len(tpa)
        JSre = np.concatenate([(B1 + B2).real, (B1 - B2).imag, np.zeros((nt, 3))], axis=1)
        JSim = np.concatenate([(B1 + B2).imag[off], (B2 - B1).real[off], np.zeros((off.sum(), 3))], axis=1)

        # nu = gamma0 * a * lam
        g0 = self.gamma0
        jn = np.zeros((1, Jre.shape[1]))
        jn[0, -3] = -2 * g0 * a * mu
        jn[0, -2] = 1.0
        jn[0, -1] = -g0 * lam * math.sin(2 * th)

        r = np.concatenate([rT.real, rT[ki].imag, rS.real, rS[off].imag, [nu - g0 * a * lam]])
        J = np.concatenate([Jre, Jim, JSre, JSim, jn], axis=0)
        return r, J

    def residual(self, xv: np.ndarray) -> np.ndarray:
        return self.residual_and_jacobian(xv)[0]

    def reduced_residual_and_jacobian(self, xv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Equivalent well-conditioned system used by the solver.

        Zero exactly where the raw conditions (apart from the nu row) are zero,
        provided the dependent combinations are consistent.
        """
        nk = self.n_kraus_params // 2
        P = self.N_K
        Kv = (xv[:nk] + 1j * xv[nk : 2 * nk]).reshape(P, -1)
        mu, nu, th = xv[2 * nk :]
        lam, a = mu * mu, math.sin(th) ** 2
        nq, F, _ = self._red_G.shape
        u = (self._red_Gf @ Kv.conj().T).reshape(nq, F, P).transpose(0, 2, 1)
        v = (self._red_Gt @ Kv.T).reshape(nq, F, P).transpose(0, 2, 1)
        h = (u.reshape(nq, -1) @ Kv.reshape(-1)).real
        r = h + self._red_lam * lam + self._red_nu * nu - self._red_rhs
        J = np.zeros((nq + 1, xv.size))
        J[:nq, :nk] = (u + v).real.reshape(nq, nk)
        J[:nq, nk : 2 * nk] = (v - u).imag.reshape(nq, nk)
        J[:nq, -3] = 2 * mu * self._red_lam
        J[:nq, -2] = self._red_nu
        g0 = self.gamma0
        J[nq, -3] = -2 * g0 * a * mu
        J[nq, -2] = 1.0
        J[nq, -1] = -g0 * lam * math.sin(2 * th)
        return np.concatenate([r, [nu - g0 * a * lam]]), J


def constraint_residuals(problem: RestoreProblem, kraus: KrausSet, lam: float, nu: float, a: float) -> np.ndarray:
    """Stacked real residuals of the variant's restoring system for given unknowns."""
    return problem.residual(problem.pack(kraus, lam, nu, a))


# --------------------------------------------------------------------------
# Solutions and the multistart driver


@dataclass
class RestoreSolution:
    kraus: KrausSet
    lam: float
    nu: float
    a: float
    residual: float
    seed: int
    start_index: int
    N_R: int

    @property
    def p(self) -> float:
        return self.lam + self.N_R * self.nu

    @property
    def Lambda(self) -> float:
        return self.lam / self.p

    @property
    def ratio(self) -> float:
        return self.nu / self.lam

    def summary(self) -> dict:
        return {
            "lambda": self.lam,
            "nu": self.nu,
            "Lambda": self.Lambda,
            "p": self.p,
            "a": self.a,
            "residual": self.residual,
            "seed": self.seed,
            "start_index": self.start_index,
        }


def _start_state(problem: RestoreProblem, rng: np.random.Generator) -> np.ndarray:
    kraus = KrausSet.random(problem.layout, problem.N_K, rng)
    # a = 1 is the loosest admixture bound; refine() lowers it afterwards
    return problem.pack(kraus, 0.1, 0.0, 1.0)


def _theta_free(problem: RestoreProblem, n: int, fix_theta=False, fix_mu=False) -> np.ndarray:
    free = np.ones(n, dtype=bool)
    if fix_mu:
        free[-3] = False
    if fix_theta or problem.gamma0 == 0.0:
        free[-1] = False
    return free


def _solve(problem: RestoreProblem, x0, free, **kw):
    return levenberg_marquardt(problem.reduced_residual_and_jacobian, x0, free=free, **kw)


def _raw_max(problem: RestoreProblem, x: np.ndarray) -> float:
    return float(np.abs(problem.residual(x)).max())


def _accepted(problem: RestoreProblem, res) -> bool:
    return res.x[-3] ** 2 > 1e-8 and res.max_residual < ACCEPT_RESIDUAL and _raw_max(problem, res.x) < ACCEPT_RESIDUAL


def refine(problem: RestoreProblem, x: np.ndarray, steps: int = 18, max_iter: int = 150) -> np.ndarray:
    """Drive an accepted point towards smaller nu/lam, then larger lam.

    Bisection on the admixture ratio a (lam free), followed by bisection on lam
    at the final ratio; every trial is warm-started from the last accepted point.
    """
    n = x.size
    kw = dict(max_iter=max_iter, stall=30)
    if problem.gamma0 > 0:
        lo, hi = 0.0, math.sin(x[-1]) ** 2
        for _ in range(steps):
            mid = 0.5 * (lo + hi)
            trial = x.copy()
            trial[-1] = math.asin(math.sqrt(mid))
            res = _solve(problem, trial, _theta_free(problem, n, fix_theta=True), **kw)
            if _accepted(problem, res):
                x, hi = res.x, mid
            else:
                lo = mid
    lo, hi = x[-3] ** 2, 1.0
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        trial = x.copy()
        trial[-3] = math.sqrt(mid)
        res = _solve(problem, trial, _theta_free(problem, n, fix_theta=True, fix_mu=True), **kw)
        if _accepted(problem, res):
            x, lo = res.x, mid
        else:
            hi = mid
    return x


def _run_start(args):
    problem, master_seed, start = args
    rng = np.random.default_rng([master_seed, start])
    x0 = _start_state(problem, rng)
    res = _solve(problem, x0, _theta_free(problem, x0.size))
    return start, res.x, _raw_max(problem, res.x)


def _better(key_a, key_b) -> bool:
    return key_a < key_b


def solve_multistart(
    problem: RestoreProblem,
    n_starts: int,
    master_seed: int,
    *,
    n_refine: int = 4,
    threads: int = 1,
) -> RestoreSolution:
    """Independent damped least-squares solves from random Kraus sets.

    Start ``s`` draws from ``default_rng([master_seed, s])``. Accepted solutions
    (max residual < 1e-9) are ranked by nu/lam, ties by larger lam then smaller
    start index; the best ``n_refine`` are pushed further by :func:`refine`.
    """
    if n_starts < 1:
        raise ValueError("n_starts must be positive")
    jobs = [(problem, master_seed, s) for s in range(n_starts)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_start, jobs, chunksize=max(1, n_starts // (4 * threads))))
    else:
        results = [_run_start(j) for j in jobs]
    results.sort(key=lambda r: r[0])

    def rank(start, xv):
        _, lam, nu, _ = problem.unpack(xv)
        return (round(nu / lam, 12), -round(lam, 12), start)

    accepted = [(rank(s, xv), s, xv) for s, xv, r in results if r < ACCEPT_RESIDUAL and xv[-3] ** 2 > 1e-8]
    if not accepted:
        best = min(r for _, _, r in results)
        raise SolverFailure(f"no start reached residual < {ACCEPT_RESIDUAL:g}", best)
    accepted.sort(key=lambda t: t[0])
    top = accepted[: max(n_refine, 1)]
    if n_refine == 0:
        refined = [t[2] for t in top]
    elif threads > 1 and len(top) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(top))) as pool:
            refined = list(pool.map(refine, [problem] * len(top), [t[2] for t in top]))
    else:
        refined = [refine(problem, t[2]) for t in top]
    cands = sorted((rank(t[1], xv), t[1], xv) for t, xv in zip(top, refined))
    _, start, xv = cands[0]
    kraus, lam, nu, a = problem.unpack(xv)
    resid = float(np.abs(problem.residual(xv)).max())
    return RestoreSolution(
        kraus=kraus,
        lam=lam,
        nu=nu,
        a=a,
        residual=resid,
        seed=master_seed,
        start_index=start,
        N_R=len(problem.basis.receiver_block),
    )


def universality_check(solution: RestoreSolution, problem: RestoreProblem, n_states: int, seed: int) -> float:
    """Max deviation of the receiver block from nu I + lam rho_S over random pure senders."""
    rng = np.random.default_rng(seed)
    basis = problem.basis
    R = basis.receiver_block
    ns = problem.U_cols.shape[2]
    Kf = solution.kraus.lifted(problem.layout)
    worst = 0.0
    for _ in range(n_states):
        psi = rng.standard_normal(ns) + 1j * rng.standard_normal(ns)
        psi /= np.linalg.norm(psi)
        rho_s = np.outer(psi, psi.conj())
        rho = np.einsum("nmij,ij->nm", problem.U_cols, rho_s)
        out = np.einsum("pna,ab,pmb->nm", Kf, rho, Kf.conj())
        target = solution.nu * np.eye(len(R)) + solution.lam * rho_s
        worst = max(worst, float(np.abs(out[np.ix_(R, R)] - target).max()))
    return worst
