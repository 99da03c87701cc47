"""
Built-in primal-dual interior-point solver for ConicProgram.

Infeasible-start Mehrotra predictor-corrector on the HKM direction. The
Newton system is reduced to the Schur complement M = sum_k Phi_k' (X_k kron
S_k^-1) Phi_k over the moment variables, followed by a second Schur
complement B M^-1 B' for the equality multipliers. All blocks are dense.

Infeasibility is reported only when an iterate is itself a certificate: a
dual Farkas vector for an infeasible primal, or an improving primal ray for
an unbounded one. Iterates that blow up without either end ill-conditioned.
"""

import logging

import numpy as np
import scipy.linalg as la

from .abstract_solver import AbstractSolver, SolverOptions
from .conic import PSD, ConicProgram, ConicSolution, Status

LOGGER = logging.getLogger(__name__)

# entries of the Kronecker slab formed at once when building M
_KRON_CHUNK = 4_000_000
_DIVERGENCE = 1e10
_STALL_ITERS = 8


def independent_rows(matrix: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Indices of a maximal independent subset of rows (QR with column pivoting)."""
    if matrix.shape[0] == 0:
        return np.zeros(0, dtype=int)
    _, r, perm = la.qr(matrix.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0:
        return np.zeros(0, dtype=int)
    rank = int(np.sum(diag > tol * diag[0]))
    return np.sort(perm[:rank])


def max_step(value: np.ndarray, direction: np.ndarray, psd: bool) -> float:
    """Largest a with value + a * direction still in the cone (inf if unbounded)."""
    if psd:
        factor = la.cholesky(value, lower=True)
        w = la.solve_triangular(factor, direction, lower=True)
        w = la.solve_triangular(factor, w.T, lower=True)
        smallest = la.eigvalsh((w + w.T) / 2, subset_by_index=[0, 0])[0]
        return np.inf if smallest >= 0 else -1.0 / smallest
    negative = direction < 0
    if not negative.any():
        return np.inf
    return float(np.min(-value[negative] / direction[negative]))


class _SchurFactor:
    """Cholesky of M with escalating diagonal regularization."""

    def __init__(self, matrix: np.ndarray):
        self.regularized = False
        scale = max(1.0, float(np.max(np.abs(np.diag(matrix))))) if matrix.size else 1.0
        shift = 0.0
        for attempt in range(6):
            try:
                self.factor = la.cho_factor(
                    matrix + shift * np.eye(matrix.shape[0]), lower=True, check_finite=False
                )
                if shift:
                    self.regularized = True
                    LOGGER.debug("Schur complement regularized by %.1e", shift)
                return
            except la.LinAlgError:
                shift = scale * 1e-14 * 100**attempt
        raise la.LinAlgError("Schur complement is numerically singular")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return la.cho_solve(self.factor, rhs, check_finite=False)


class InteriorPointSolver(AbstractSolver):
    def __init__(self, options: SolverOptions | None = None):
        super().__init__(options)

    def _solve(self, cp: ConicProgram) -> ConicSolution:
        return _InteriorPointRun(cp, self.options).run()


class _InteriorPointRun:
    def __init__(self, cp: ConicProgram, options: SolverOptions):
        self.cp = cp
        self.options = options
        b_all = cp.eq_matrix.toarray()
        self.keep = independent_rows(b_all)
        self.B = b_all[self.keep]
        self.b = cp.eq_rhs[self.keep]
        self.B_all = b_all
        self.cones = cp.cones
        self.local = []
        for cone in self.cones:
            cols = np.unique(cone.phi.indices)
            phi = cone.phi[:, cols].tocsr()
            self.local.append((cols, phi, phi.T.tocsr()))
        self.nu = sum(cone.size for cone in self.cones)

    # cone algebra

    def _inner(self, X: list, S: list) -> float:
        return float(sum(np.sum(x * s) for x, s in zip(X, S)))

    def _apply(self, y: np.ndarray) -> list[np.ndarray]:
        return [cone.affine(y) for cone in self.cones]

    def _adjoint(self, W: list[np.ndarray]) -> np.ndarray:
        out = np.zeros(self.cp.nvars)
        for cone, w in zip(self.cones, W):
            out += cone.phi.T @ np.ravel(w)
        return out

    def _schur(self, X: list, Sinv: list) -> np.ndarray:
        n = self.cp.nvars
        M = np.zeros((n, n))
        for cone, (cols, phi, phi_t), x, s_inv in zip(self.cones, self.local, X, Sinv):
            if cone.kind == PSD:
                size = cone.size
                local = np.zeros((cols.size, cols.size))
                chunk = max(1, _KRON_CHUNK // size**3)
                for r0 in range(0, size, chunk):
                    r1 = min(size, r0 + chunk)
                    slab = np.kron(x[r0:r1], s_inv)
                    projected = (phi_t @ slab.T).T
                    local += phi[r0 * size : r1 * size].T @ projected
                local = (local + local.T) / 2
            else:
                weighted = phi.multiply((x * s_inv)[:, None]).tocsr()
                local = (phi_t @ weighted).toarray()
            M[np.ix_(cols, cols)] += local
        return M

    # infeasibility certificates

    def _primal_infeasibility(self, X: list, lam: np.ndarray) -> float:
        """
        Scaled residual of the Farkas system Phi'X + B'lam = 0, b'lam - <h, X> > 0.
        A value below tolerance means no y satisfies the constraints.
        """
        offset = sum(np.sum(cone.const * np.ravel(x)) for cone, x in zip(self.cones, X))
        lift = float(self.b @ lam - offset)
        if lift <= 0:
            return np.inf
        residual = np.linalg.norm(self._adjoint(X) + self.B.T @ lam)
        return residual * (1 + np.linalg.norm(self.b)) / lift

    def _dual_infeasibility(self, y: np.ndarray) -> float:
        """
        Scaled violation of By = 0, Phi y in K for a direction with c'y < 0.
        A value below tolerance makes y a ray along which the objective is unbounded.
        """
        descent = -float(self.cp.c @ y)
        if descent <= 0:
            return np.inf
        scale = (1 + np.linalg.norm(self.cp.c)) / descent
        violation = np.linalg.norm(self.B @ y)
        if violation * scale > self.options.feas_tol:
            return violation * scale
        for cone in self.cones:
            value = cone.phi @ y
            if cone.kind == PSD:
                m = value.reshape(cone.size, cone.size)
                smallest = la.eigvalsh((m + m.T) / 2, subset_by_index=[0, 0])[0]
                violation = max(violation, -smallest)
            elif value.size:
                violation = max(violation, -float(np.min(value)))
        return max(violation, 0.0) * scale

    # Newton direction

    def _direction(self, state, rp, rb, rd, sigma, mu, corrector=None):
        X, S, Sinv = state["X"], state["S"], state["Sinv"]
        Q, T = [], []
        for k, cone in enumerate(self.cones):
            if cone.kind == PSD:
                q = sigma * mu * Sinv[k] - X[k]
                if corrector is not None:
                    q = q - corrector[0][k] @ corrector[1][k] @ Sinv[k]
                Q.append(q)
                T.append(q - X[k] @ rp[k] @ Sinv[k])
            else:
                q = sigma * mu * Sinv[k] - X[k]
                if corrector is not None:
                    q = q - corrector[0][k] * corrector[1][k] * Sinv[k]
                Q.append(q)
                T.append(q - X[k] * rp[k] * Sinv[k])
        g = self._adjoint(T) - rd
        factor = state["factor"]
        if self.B.shape[0]:
            mi_g = factor.solve(g)
            mi_bt = state["mi_bt"]
            dlam = la.cho_solve(state["schur_b"], rb - self.B @ mi_g)
            dy = mi_g + mi_bt @ dlam
        else:
            dlam = np.zeros(0)
            dy = factor.solve(g)
        dS, dX = [], []
        for k, cone in enumerate(self.cones):
            ds = (cone.phi @ dy).reshape(np.shape(rp[k])) + rp[k]
            dS.append(ds)
            if cone.kind == PSD:
                dx = Q[k] - X[k] @ ds @ Sinv[k]
                dX.append((dx + dx.T) / 2)
            else:
                dX.append(Q[k] - X[k] * ds * Sinv[k])
        return dy, dlam, dX, dS

    def _steps(self, X, S, dX, dS) -> tuple[float, float]:
        alpha_p, alpha_d = np.inf, np.inf
        for cone, x, s, dx, ds in zip(self.cones, X, S, dX, dS):
            psd = cone.kind == PSD
            alpha_p = min(alpha_p, max_step(s, ds, psd))
            alpha_d = min(alpha_d, max_step(x, dx, psd))
        return alpha_p, alpha_d

    # main loop

    def run(self) -> ConicSolution:
        cp, opts = self.cp, self.options
        if self.B.shape[0]:
            y = la.lstsq(self.B, self.b)[0]
            mismatch = np.linalg.norm(self.B_all @ y - cp.eq_rhs)
            if mismatch > 1e-8 * (1 + np.linalg.norm(cp.eq_rhs)):
                LOGGER.warning("Equality rows are inconsistent (residual %.2e)", mismatch)
                return self._result(Status.INFEASIBLE, y, np.zeros(self.B.shape[0]), [], 0)
        else:
            y = np.zeros(cp.nvars)
        X, S = [], []
        for cone in self.cones:
            if cone.kind == PSD:
                X.append(opts.init_scale * np.eye(cone.size))
                S.append(opts.init_scale * np.eye(cone.size))
            else:
                X.append(opts.init_scale * np.ones(cone.size))
                S.append(opts.init_scale * np.ones(cone.size))
        lam = np.zeros(self.B.shape[0])

        norm_b = 1 + np.linalg.norm(self.b)
        norm_c = 1 + np.linalg.norm(cp.c)
        status = Status.MAX_ITER
        stalled = 0
        short_steps = 0
        iteration = 0
        best_merit = np.inf
        for iteration in range(1, opts.max_iters + 1):
            Fy = self._apply(y)
            rp = [f - s for f, s in zip(Fy, S)]
            rb = self.b - self.B @ y
            rd = cp.c - self._adjoint(X) - self.B.T @ lam
            mu = self._inner(X, S) / max(self.nu, 1)
            pobj = cp.objective(y)
            dobj = float(
                self.b @ lam
                - sum(np.sum(cone.const * np.ravel(x)) for cone, x in zip(self.cones, X))
                + cp.offset
            )
            pinf = np.sqrt(np.linalg.norm(rb) ** 2 + sum(np.sum(r * r) for r in rp)) / norm_b
            dinf = np.linalg.norm(rd) / norm_c
            gap = abs(pobj - dobj) / max(1.0, abs(pobj))
            LOGGER.debug(
                "it %3i pobj % .8e dobj % .8e pinf %.1e dinf %.1e gap %.1e mu %.1e",
                iteration,
                pobj,
                dobj,
                pinf,
                dinf,
                gap,
                mu,
            )
            self.last = (pinf, dinf)
            if pinf <= opts.feas_tol and dinf <= opts.feas_tol and gap <= opts.gap_tol:
                status = Status.OPTIMAL
                break
            farkas = self._primal_infeasibility(X, lam) if pinf > opts.feas_tol else np.inf
            if farkas <= opts.feas_tol:
                LOGGER.info("Dual iterate certifies primal infeasibility (residual %.1e)", farkas)
                status = Status.INFEASIBLE
                break
            ray = self._dual_infeasibility(y) if dinf > opts.feas_tol else np.inf
            if ray <= opts.feas_tol:
                LOGGER.info("Primal iterate is an improving ray (residual %.1e)", ray)
                status = Status.UNBOUNDED
                break
            largest = max([np.linalg.norm(y)] + [np.linalg.norm(x) for x in X])
            if largest > _DIVERGENCE:
                LOGGER.warning("Interior point iterates diverged without an infeasibility certificate")
                status = Status.ILL_CONDITIONED
                break

            # progress toward optimality or toward either certificate
            merit = min(pinf + dinf + gap, farkas, ray)
            if merit < 0.9 * best_merit:
                best_merit = merit
                stalled = 0
            else:
                stalled += 1
            if stalled >= _STALL_ITERS or short_steps >= _STALL_ITERS:
                LOGGER.warning(
                    "Interior point stalled at gap %.1e, infeasibility %.1e",
                    gap,
                    max(pinf, dinf),
                )
                status = Status.ILL_CONDITIONED
                break

            try:
                Sinv = []
                for cone, s in zip(self.cones, S):
                    if cone.kind == PSD:
                        Sinv.append(la.cho_solve(la.cho_factor(s, lower=True), np.eye(cone.size)))
                    else:
                        Sinv.append(1.0 / s)
                factor = _SchurFactor(self._schur(X, Sinv))
                state = {"X": X, "S": S, "Sinv": Sinv, "factor": factor}
                if self.B.shape[0]:
                    mi_bt = factor.solve(self.B.T)
                    state["mi_bt"] = mi_bt
                    schur_b = self.B @ mi_bt
                    schur_b = (schur_b + schur_b.T) / 2
                    state["schur_b"] = la.cho_factor(schur_b, lower=True)

                dy, dlam, dX, dS = self._direction(state, rp, rb, rd, 0.0, mu)
                a_p, a_d = self._steps(X, S, dX, dS)
                a_p, a_d = min(1.0, a_p), min(1.0, a_d)
                mu_aff = self._inner(
                    [x + a_d * dx for x, dx in zip(X, dX)],
                    [s + a_p * ds for s, ds in zip(S, dS)],
                ) / max(self.nu, 1)
                sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3 if mu > 0 else 0.0

                dy, dlam, dX, dS = self._direction(
                    state, rp, rb, rd, sigma, mu, corrector=(dX, dS)
                )
                a_p, a_d = self._steps(X, S, dX, dS)
            except la.LinAlgError as exc:
                LOGGER.warning("Interior point factorization failed: %s", exc)
                status = Status.ILL_CONDITIONED
                break
            a_p = min(1.0, opts.step * a_p)
            a_d = min(1.0, opts.step * a_d)
            short_steps = short_steps + 1 if max(a_p, a_d) < 1e-4 else 0

            y = y + a_p * dy
            S = [s + a_p * ds for s, ds in zip(S, dS)]
            X = [x + a_d * dx for x, dx in zip(X, dX)]
            lam = lam + a_d * dlam
        return self._result(status, y, lam, X, iteration)

    def _result(self, status, y, lam, X, iterations) -> ConicSolution:
        cp = self.cp
        eq_duals = np.zeros(cp.neq)
        eq_duals[self.keep] = lam
        if X:
            dobj = float(
                self.b @ lam
                - sum(np.sum(cone.const * np.ravel(x)) for cone, x in zip(self.cones, X))
                + cp.offset
            )
        else:
            dobj = float("nan")
        pinf, dinf = getattr(self, "last", (float("nan"), float("nan")))
        return ConicSolution(
            status=status,
            y=y,
            eq_duals=eq_duals,
            cone_duals=list(X),
            primal_objective=cp.objective(y),
            dual_objective=dobj,
            iterations=iterations,
            primal_residual=float(pinf),
            dual_residual=float(dinf),
        )
