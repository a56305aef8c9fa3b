"""Quasi-likelihood estimation of a diffusion matrix constrained to the PSD cone.

Observations are an Ito process on a fixed horizon sampled at n points;
the estimand is the squared diffusion parameter (an m x m PSD matrix) in
half-vectorized coordinates, with the drift treated as a nuisance. Three
built-in diffusion shapes are provided:

* ``identity``      f(x) = I_m, observation dimension m
* ``poly_iso``      f(x) = (1 + |x|^2) I_m
* ``regressor``     f(x) = (1, x), scalar observations, m = 2

The ``regressor`` shape keeps the one-step covariance s(x) = (1,x) A (1,x)'
bounded away from zero for every PSD A with A11 > 0, so the local score and
information exist even when the true matrix is rank deficient; it is the
shape that exercises the tangent-cone limit honestly. With ``identity`` and
a singular truth, the anchor covariance itself is singular and the
information integral does not exist; those calls raise SingularModelError.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DomainError, NonConvergenceError, SingularModelError
from .limitfield import FieldDraw, LimitField, argmax as field_argmax
from .localsets import PsdBall, PsdTangentCone, half_to_sym, sym_dim, sym_to_half

EIG_FLOOR = 1e-12


@dataclass(frozen=True)
class DiffusionModel:
    f_kind: str
    a_star: np.ndarray
    horizon: float = 1.0
    norm_bound: float = 10.0
    drift: np.ndarray | None = None  # constant drift, observation dimension
    y0: np.ndarray | None = None

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a_star, dtype=float))
        if a.shape[0] != a.shape[1] or not np.allclose(a, a.T):
            raise DomainError("a_star must be symmetric")
        if float(np.linalg.eigvalsh(a)[0]) < -1e-12:
            raise DomainError("a_star must be positive semi-definite")
        if np.linalg.norm(a) >= self.norm_bound:
            raise DomainError("a_star must lie strictly inside the norm ball")
        if self.f_kind not in ("identity", "poly_iso", "regressor"):
            raise DomainError(f"unknown f kind {self.f_kind!r}")
        if self.f_kind == "regressor" and a.shape[0] != 2:
            raise DomainError("regressor shape requires a 2x2 matrix parameter")
        object.__setattr__(self, "a_star", a)
        d = 1 if self.f_kind == "regressor" else a.shape[0]
        drift = np.zeros(d) if self.drift is None else np.asarray(self.drift, dtype=float)
        if drift.shape != (d,):
            raise DomainError("drift dimension mismatch")
        object.__setattr__(self, "drift", drift)
        y0 = np.zeros(d) if self.y0 is None else np.asarray(self.y0, dtype=float)
        if y0.shape != (d,):
            raise DomainError("y0 dimension mismatch")
        object.__setattr__(self, "y0", y0)

    @property
    def m(self) -> int:
        return self.a_star.shape[0]

    @property
    def obs_dim(self) -> int:
        return 1 if self.f_kind == "regressor" else self.m

    @property
    def n_params(self) -> int:
        return sym_dim(self.m)

    def theta_star(self) -> np.ndarray:
        return sym_to_half(self.a_star)

    def parameter_space(self) -> PsdBall:
        return PsdBall(self.m, self.norm_bound)


@dataclass(frozen=True)
class SamplePath:
    times: np.ndarray
    y: np.ndarray  # (n+1, obs_dim)

    @property
    def n(self) -> int:
        return self.y.shape[0] - 1

    @property
    def h(self) -> float:
        return float(self.times[1] - self.times[0])


def _matrix_sqrt(a: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(a)
    return (vecs * np.sqrt(np.maximum(vals, 0.0))) @ vecs.T


def simulate_path(model: DiffusionModel, n: int, euler_refine: int,
                  rng: np.random.Generator) -> SamplePath:
    """Euler path at step h/euler_refine, subsampled to the observation grid."""
    if n < 10 or euler_refine < 1:
        raise DomainError("need n >= 10 and euler_refine >= 1")
    h_fine = model.horizon / (n * euler_refine)
    steps = n * euler_refine
    root = _matrix_sqrt(model.a_star)
    z = rng.standard_normal((steps, model.m))
    if model.f_kind == "identity":
        fine = _kernels.euler_constant_f(model.y0, model.drift, root, h_fine, z)
    elif model.f_kind == "poly_iso":
        fine = _kernels.euler_poly_iso(model.y0, model.drift, root, h_fine, z)
    else:
        fine = _kernels.euler_scalar_regressor(
            float(model.y0[0]), float(model.drift[0]), root[0], root[1], h_fine, z
        )
        fine = fine[:, None]
    y = fine[::euler_refine]
    if not np.all(np.isfinite(y)):
        bad = int(np.flatnonzero(~np.isfinite(fine).all(axis=1))[0])
        raise SingularModelError("path exploded to non-finite values", step_index=bad)
    times = np.linspace(0.0, model.horizon, n + 1)
    return SamplePath(times=times, y=y)


def _sym_basis(m: int):
    out = []
    for i in range(m):
        for j in range(i, m):
            e = np.zeros((m, m))
            e[i, j] = 1.0
            e[j, i] = 1.0
            out.append(e)
    return out


def _phi_regressor(x: np.ndarray) -> np.ndarray:
    """Per-step derivative of s(x) = (1,x) A (1,x)' in half-vec coordinates."""
    return np.stack([np.ones_like(x), 2.0 * x, x * x], axis=1)


def _residuals(path: SamplePath, model: DiffusionModel, tau):
    dy = np.diff(path.y, axis=0)
    if tau is not None:
        dy = dy - path.h * np.asarray(tau, dtype=float)
    return dy


def quasi_loglik(path: SamplePath, theta, model: DiffusionModel, tau=None) -> float:
    """Discretized Gaussian quasi-log-likelihood; drift correction optional."""
    theta = np.asarray(theta, dtype=float)
    a = half_to_sym(theta, model.m)
    h = path.h
    eps = _residuals(path, model, tau)
    x = path.y[:-1]
    if model.f_kind == "regressor":
        s = _phi_regressor(x[:, 0]) @ theta
        if np.min(s) <= EIG_FLOOR:
            raise SingularModelError(
                "one-step covariance hit zero", step_index=int(np.argmin(s))
            )
        return float(-0.5 * np.sum(np.log(s) + eps[:, 0] ** 2 / (h * s)))
    vals = np.linalg.eigvalsh(a)
    if model.f_kind == "identity":
        if vals[0] <= EIG_FLOOR:
            raise SingularModelError("covariance matrix is singular", step_index=0)
        a_inv = np.linalg.inv(a)
        quad = np.einsum("ni,ij,nj->n", eps, a_inv, eps)
        logdet = float(np.linalg.slogdet(a)[1])
        return float(-0.5 * np.sum(logdet + quad / h))
    # poly_iso: S(x) = s(x)^2 A with s(x) = 1 + |x|^2
    if vals[0] <= EIG_FLOOR:
        raise SingularModelError("covariance matrix is singular", step_index=0)
    scale = 1.0 + np.sum(x * x, axis=1)
    a_inv = np.linalg.inv(a)
    quad = np.einsum("ni,ij,nj->n", eps, a_inv, eps) / (scale**2)
    logdet = float(np.linalg.slogdet(a)[1])
    m = model.m
    return float(-0.5 * np.sum(logdet + 2 * m * np.log(scale) + quad / h))


def quasi_score(path: SamplePath, theta, model: DiffusionModel, tau=None) -> np.ndarray:
    """Analytic gradient of the quasi-log-likelihood in half-vec coordinates."""
    theta = np.asarray(theta, dtype=float)
    h = path.h
    eps = _residuals(path, model, tau)
    x = path.y[:-1]
    if model.f_kind == "regressor":
        phi = _phi_regressor(x[:, 0])
        s = phi @ theta
        if np.min(s) <= EIG_FLOOR:
            raise SingularModelError("one-step covariance hit zero",
                                     step_index=int(np.argmin(s)))
        w = eps[:, 0] ** 2 / (h * s * s) - 1.0 / s
        return 0.5 * phi.T @ w
    a = half_to_sym(theta, model.m)
    if float(np.linalg.eigvalsh(a)[0]) <= EIG_FLOOR:
        raise SingularModelError("covariance matrix is singular", step_index=0)
    a_inv = np.linalg.inv(a)
    n = path.n
    if model.f_kind == "identity":
        q = eps.T @ eps / (n * h)
        g = 0.5 * n * (a_inv @ q @ a_inv - a_inv)
    else:
        scale2 = (1.0 + np.sum(x * x, axis=1)) ** 2
        q = (eps / scale2[:, None]).T @ eps / (n * h)
        g = 0.5 * n * (a_inv @ q @ a_inv - a_inv)
    out = np.empty(model.n_params)
    k = 0
    for i in range(model.m):
        for j in range(i, model.m):
            out[k] = g[i, j] if i == j else 2.0 * g[i, j]
            k += 1
    return out


def gamma_info(path: SamplePath, theta_star, model: DiffusionModel) -> np.ndarray:
    """Riemann-sum information matrix at the anchor point (left endpoints)."""
    theta_star = np.asarray(theta_star, dtype=float)
    x = path.y[:-1]
    n = path.n
    if model.f_kind == "regressor":
        phi = _phi_regressor(x[:, 0])
        s = phi @ theta_star
        if np.min(s) <= EIG_FLOOR:
            raise SingularModelError("anchor covariance is singular",
                                     step_index=int(np.argmin(s)))
        w = 1.0 / (s * s)
        gamma = 0.5 * (phi * w[:, None]).T @ phi / n
    else:
        a = half_to_sym(theta_star, model.m)
        vals = np.linalg.eigvalsh(a)
        if vals[0] <= EIG_FLOOR:
            raise SingularModelError("anchor covariance is singular", step_index=0)
        a_inv = np.linalg.inv(a)
        basis = _sym_basis(model.m)
        p = model.n_params
        gamma = np.empty((p, p))
        for k in range(p):
            for l in range(k, p):
                val = 0.5 * np.trace(a_inv @ basis[k] @ a_inv @ basis[l])
                gamma[k, l] = gamma[l, k] = val
    gamma = 0.5 * (gamma + gamma.T)
    return gamma


def drift_ls_fit(path: SamplePath, bound: float = 10.0) -> np.ndarray:
    """Least-squares constant-drift fit, clipped to a compact box."""
    tau = (path.y[-1] - path.y[0]) / (path.times[-1] - path.times[0])
    return np.clip(tau, -bound, bound)


def _project_psd_floor(space: PsdBall, theta: np.ndarray, floor: float) -> np.ndarray:
    a = half_to_sym(theta, space.m)
    vals, vecs = np.linalg.eigh(a)
    a = (vecs * np.maximum(vals, floor)) @ vecs.T
    nrm = np.linalg.norm(a)
    if nrm > space.norm_bound:
        a *= space.norm_bound / nrm
    return sym_to_half(a)


def _moment_start(path: SamplePath, model: DiffusionModel, tau) -> np.ndarray:
    eps = _residuals(path, model, tau)
    h = path.h
    n = path.n
    if model.f_kind == "regressor":
        phi = _phi_regressor(path.y[:-1, 0])
        target = eps[:, 0] ** 2 / h
        coef, *_ = np.linalg.lstsq(phi, target, rcond=None)
        return coef
    q = eps.T @ eps / (n * h)
    if model.f_kind == "poly_iso":
        scale2 = (1.0 + np.sum(path.y[:-1] * path.y[:-1], axis=1)) ** 2
        q = (eps / scale2[:, None]).T @ eps / (n * h)
    return sym_to_half(q)


def qmle_psd(path: SamplePath, model: DiffusionModel, tau=None, n_starts: int = 5,
             rng: np.random.Generator | None = None, max_iter: int = 600,
             n_probe: int = 20):
    """Maximizer of the quasi-log-likelihood over the PSD ball.

    Projected multi-start ascent; projection clips eigenvalues at the
    invertibility floor so every iterate stays evaluable. Returns the
    half-vectorized estimate.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    space = model.parameter_space()

    def project(th):
        return _project_psd_floor(space, th, EIG_FLOOR)

    def value(th):
        try:
            return quasi_loglik(path, th, model, tau)
        except SingularModelError:
            return -math.inf

    starts = [project(_moment_start(path, model, tau))]
    starts.append(project(sym_to_half(np.eye(model.m))))
    while len(starts) < n_starts:
        a = rng.normal(size=(model.m, model.m))
        starts.append(project(sym_to_half(a @ a.T)))

    def ascent_direction(th, g):
        # natural-gradient scaling by the local information; falls back to a
        # plain scaled gradient when the information is unavailable
        try:
            info = gamma_info(path, th, model) * path.n
            direction = np.linalg.solve(info + 1e-10 * np.eye(th.size), g)
            if direction @ g > 0:
                return direction
        except (SingularModelError, np.linalg.LinAlgError):
            pass
        return g / max(1.0, path.n)

    cands = []
    for s in starts:
        th = s.copy()
        fval = value(th)
        step = 1.0
        for _ in range(max_iter):
            try:
                g = quasi_score(path, th, model, tau)
            except SingularModelError:
                break
            direction = ascent_direction(th, g)
            moved = False
            while step >= 1e-14:
                cand = project(th + step * direction)
                cval = value(cand)
                if cval > fval + 1e-12 * (1.0 + abs(fval)):
                    th, fval = cand, cval
                    step = min(step * 2.0, 64.0)
                    moved = True
                    break
                step *= 0.5
            if not moved:
                break
        cands.append((th, fval))
    cands.sort(key=lambda t: -t[1])
    th_best, v_best = cands[0]
    if not math.isfinite(v_best):
        raise NonConvergenceError("no feasible starting point", candidates=cands)

    # random projected probes must not dominate
    for _ in range(n_probe):
        w = th_best + rng.normal(scale=0.5 / math.sqrt(path.n), size=th_best.size)
        if value(project(w)) > v_best + 1e-6:
            raise NonConvergenceError("probe beat the reported maximizer",
                                      candidates=cands)
    return th_best, {"value": v_best, "candidates": len(cands)}


def scalar_closed_form(path: SamplePath, model: DiffusionModel, tau=None) -> float:
    """Scalar-model oracle: the realized quadratic variation estimate."""
    if model.m != 1 or model.f_kind != "identity":
        raise DomainError("closed form applies to the scalar identity model")
    eps = _residuals(path, model, tau)
    return float(np.sum(eps[:, 0] ** 2) / (path.n * path.h))


def tangent_cone(model: DiffusionModel, tol: float = 1e-10) -> PsdTangentCone:
    """Local approximating cone at the truth: kernel block constrained PSD."""
    vals, vecs = np.linalg.eigh(model.a_star)
    kernel = vecs[:, vals <= tol]
    return PsdTangentCone(model.m, kernel)


def local_field_draw(path: SamplePath, model: DiffusionModel, tau) -> FieldDraw:
    """Score/information realization at the truth from one observed path."""
    theta_star = model.theta_star()
    gamma = gamma_info(path, theta_star, model)
    delta = quasi_score(path, theta_star, model, tau) / math.sqrt(path.n)
    return FieldDraw(gamma=gamma, delta=delta)


def one_pairing_replication(model: DiffusionModel, n: int, euler_refine: int,
                            seed_seq: np.random.SeedSequence,
                            tau_mode: str = "ls", tau_fixed=None):
    """One path: estimator-side u_n and local-field maximizer v_n.

    tau_mode: "none" uses the plain objective, "ls" fits a constant drift,
    "fixed" uses the supplied nuisance value (adversarial option).
    """
    rng = np.random.default_rng(seed_seq)
    path = simulate_path(model, n, euler_refine, rng)
    if tau_mode == "none":
        tau = None
    elif tau_mode == "ls":
        tau = drift_ls_fit(path)
    elif tau_mode == "fixed":
        tau = np.asarray(tau_fixed, dtype=float)
    else:
        raise DomainError(f"unknown tau mode {tau_mode!r}")

    theta_hat, info = qmle_psd(path, model, tau=tau, rng=rng)
    u_hat = math.sqrt(n) * (theta_hat - model.theta_star())

    fd = local_field_draw(path, model, tau)
    cone = tangent_cone(model)
    spec = LimitField(dim=model.n_params, domain=cone, gamma_fixed=fd.gamma)
    v_hat = field_argmax(spec, fd, rng=rng, n_random_starts=2, n_probe=0)
    return {
        "u_hat": u_hat,
        "v_hat": v_hat,
        "gap": float(np.linalg.norm(u_hat - v_hat)),
        "min_eig": float(np.linalg.eigvalsh(half_to_sym(theta_hat, model.m))[0]),
        "value": info["value"],
    }


def mixed_normal_reference(model: DiffusionModel, n: int, euler_refine: int):
    """Limit-field spec whose information is drawn from fresh paths."""
    cone = tangent_cone(model)

    def gamma_source(rng: np.random.Generator) -> np.ndarray:
        path = simulate_path(model, n, euler_refine, rng)
        return gamma_info(path, model.theta_star(), model)

    return LimitField(dim=model.n_params, domain=cone, gamma_generator=gamma_source)
