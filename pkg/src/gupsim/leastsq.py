"""Damped Gauss-Newton (Levenberg-style) nonlinear least squares.

Shared by the Lorentzian sideband fits and the ring-down quadrature fits.
The caller supplies residuals and an analytic Jacobian; damping is adapted
multiplicatively until a step reduces the cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FitDiverged


@dataclass
class LeastSquaresResult:
    params: np.ndarray
    covariance: np.ndarray
    cost: float                 # 0.5 * sum(residual^2)
    iterations: int
    converged: bool
    residual_std: float = 0.0
    diagnostics: dict = field(default_factory=dict)


def damped_gauss_newton(residual_fn, jacobian_fn, theta0,
                        max_iter: int = 200, xtol: float = 1e-12,
                        lam0: float = 1e-3, lam_max: float = 1e12) -> LeastSquaresResult:
    """Minimize 0.5*||r(theta)||^2 with analytic Jacobian.

    residual_fn(theta) -> (n,) residual vector.
    jacobian_fn(theta) -> (n, p) Jacobian of the residuals.
    Raises FitDiverged when no descent step can be found or values go non-finite.
    """
    theta = np.asarray(theta0, dtype=float).copy()
    r = residual_fn(theta)
    if not np.all(np.isfinite(r)):
        raise FitDiverged("non-finite residuals at initial guess")
    cost = 0.5 * float(r @ r)
    lam = lam0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        J = jacobian_fn(theta)
        g = J.T @ r
        H = J.T @ J
        d = np.diag(H).copy()
        d[d <= 0] = 1.0
        stepped = False
        for _ in range(60):
            try:
                step = np.linalg.solve(H + lam * np.diag(d), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = theta + step
            r_trial = residual_fn(trial)
            if np.all(np.isfinite(r_trial)):
                cost_trial = 0.5 * float(r_trial @ r_trial)
                if cost_trial <= cost:
                    rel_step = np.max(np.abs(step) / (np.abs(theta) + np.abs(step) + 1e-300))
                    theta, r, prev_cost, cost = trial, r_trial, cost, cost_trial
                    lam = max(lam / 3.0, 1e-14)
                    stepped = True
                    if rel_step < xtol or prev_cost - cost <= 1e-15 * (1.0 + cost):
                        converged = True
                    break
            lam *= 10.0
            if lam > lam_max:
                break
        if not stepped:
            # no descent direction found; accept as converged only if the
            # gradient is already negligible
            if np.max(np.abs(g)) <= 1e-12 * (1.0 + cost):
                converged = True
                break
            raise FitDiverged(f"no descent step found at iteration {it}")
        if converged:
            break

    J = jacobian_fn(theta)
    n, p = J.shape
    dof = max(n - p, 1)
    sigma2 = 2.0 * cost / dof
    try:
        cov = sigma2 * np.linalg.inv(J.T @ J)
    except np.linalg.LinAlgError:
        cov = np.full((p, p), np.nan)
    return LeastSquaresResult(params=theta, covariance=cov, cost=cost,
                              iterations=it, converged=converged,
                              residual_std=float(np.sqrt(sigma2)),
                              diagnostics={"lambda": lam})
