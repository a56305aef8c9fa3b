"""Limit log-fields and their constrained maximizers.

A field spec describes u -> delta . g(u) - (1/2) Gamma[g(u), g(u)]
minus linear and power penalty terms, together with the region over which
the maximizer is taken. Draws realize (Gamma, delta) either from a fixed
information matrix (Gaussian case) or from a generator producing one
positive-definite realization per draw (mixed-normal case).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NonConvergenceError
from .localsets import Box, Parabolic, Product, Region

VALUE_TOL = 1e-10
STEP_FLOOR = 1e-12
MAX_ITER = 5000
CONSENSUS_TOL = 1e-4


# ---------------------------------------------------------------------------
# pre-maps
# ---------------------------------------------------------------------------

class Identity:
    kind = "identity"

    def apply(self, u):
        return u

    def jacobian_diag(self, u):
        return np.ones_like(u)

    def active(self, p):
        return np.ones(p, dtype=bool)


@dataclass(frozen=True)
class SquareCoord:
    """g(u) squares one coordinate and passes the rest through."""

    index: int
    kind: str = field(default="square-coord", init=False)

    def apply(self, u):
        m = np.array(u, dtype=float)
        m[self.index] = m[self.index] ** 2
        return m

    def jacobian_diag(self, u):
        j = np.ones_like(u)
        j[self.index] = 2.0 * u[self.index]
        return j

    def active(self, p):
        return np.ones(p, dtype=bool)


@dataclass(frozen=True)
class DiagonalMap:
    """g(u) = b * u with a fixed 0/1 diagonal."""

    diag: tuple
    kind: str = field(default="diagonal", init=False)

    def __post_init__(self):
        d = tuple(float(x) for x in self.diag)
        if any(x not in (0.0, 1.0) for x in d):
            raise DomainError("diagonal pre-map entries must be 0 or 1")
        object.__setattr__(self, "diag", d)

    def apply(self, u):
        return np.asarray(self.diag) * u

    def jacobian_diag(self, u):
        return np.asarray(self.diag, dtype=float)

    def active(self, p):
        return np.asarray(self.diag, dtype=float) > 0.5


# ---------------------------------------------------------------------------
# spec and draws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LimitField:
    """Description of the limit log-field and its maximization domain."""

    dim: int
    domain: Region
    pre_map: object = field(default_factory=Identity)
    gamma_fixed: np.ndarray | None = None
    gamma_generator: object = None  # callable(rng) -> matrix
    penalty_linear: tuple = ()      # (index, coefficient)
    penalty_power: tuple = ()       # (index, coefficient, exponent)

    def __post_init__(self):
        if self.domain.dim != self.dim:
            raise DomainError("domain dimension mismatch")
        if (self.gamma_fixed is None) == (self.gamma_generator is None):
            raise DomainError("exactly one of gamma_fixed / gamma_generator is required")
        if self.gamma_fixed is not None:
            g = np.asarray(self.gamma_fixed, dtype=float)
            if g.shape != (self.dim, self.dim):
                raise DomainError("gamma must be square of the spec dimension")
            if not np.allclose(g, g.T, atol=1e-10):
                raise DomainError("gamma must be symmetric")
            if float(np.linalg.eigvalsh(g)[0]) < -1e-10:
                raise DomainError("fixed gamma must be positive semi-definite")
            object.__setattr__(self, "gamma_fixed", g)
        for idx, coef in self.penalty_linear:
            if coef < 0:
                raise DomainError("linear penalty coefficients must be >= 0")
        for idx, coef, q in self.penalty_power:
            if coef < 0 or q <= 0:
                raise DomainError("power penalties need coef >= 0 and exponent > 0")

    def validate_coercive(self, gamma):
        """Reject specs whose smooth part cannot control every coordinate."""
        act = self.pre_map.active(self.dim)
        sub = gamma[np.ix_(act, act)]
        if sub.size and float(np.linalg.eigvalsh(sub)[0]) <= 1e-10:
            raise DomainError("gamma restricted to active coordinates is not positive definite")
        powered = {k: c for k, c, _ in self.penalty_power}
        for j in range(self.dim):
            if not act[j] and powered.get(j, 0.0) <= 0.0:
                raise DomainError(
                    f"coordinate {j} is annihilated by the pre-map and carries no penalty"
                )


@dataclass(frozen=True)
class FieldDraw:
    gamma: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        d = np.asarray(self.delta, dtype=float)
        if float(np.linalg.eigvalsh(g)[0]) <= 0.0:
            raise DomainError("draw requires a positive definite gamma realization")
        if not np.all(np.isfinite(d)):
            raise DomainError("delta realization must be finite")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "delta", d)


def draw(spec: LimitField, rng: np.random.Generator) -> FieldDraw:
    """One (Gamma, delta) realization with delta | Gamma ~ N(0, Gamma)."""
    if spec.gamma_fixed is not None:
        gamma = spec.gamma_fixed
    else:
        gamma = np.asarray(spec.gamma_generator(rng), dtype=float)
        gamma = 0.5 * (gamma + gamma.T)
    if float(np.linalg.eigvalsh(gamma)[0]) <= 0.0:
        raise DomainError("gamma realization is not positive definite")
    chol = np.linalg.cholesky(gamma)
    delta = chol @ rng.standard_normal(spec.dim)
    return FieldDraw(gamma=gamma, delta=delta)


def log_field(spec: LimitField, d: FieldDraw, u) -> float:
    u = np.asarray(u, dtype=float)
    m = spec.pre_map.apply(u)
    val = float(d.delta @ m - 0.5 * m @ d.gamma @ m)
    for idx, coef in spec.penalty_linear:
        val -= coef * u[idx]
    for idx, coef, q in spec.penalty_power:
        val -= coef * abs(u[idx]) ** q
    return val


# ---------------------------------------------------------------------------
# argmax
# ---------------------------------------------------------------------------

def _smooth_value_grad(spec, d, u):
    m = spec.pre_map.apply(u)
    resid = d.delta - d.gamma @ m
    val = float(d.delta @ m - 0.5 * m @ d.gamma @ m)
    grad = spec.pre_map.jacobian_diag(u) * resid
    for idx, coef in spec.penalty_linear:
        val -= coef * u[idx]
        grad[idx] -= coef
    return val, grad


def _power_terms(spec, u):
    return sum(coef * abs(u[idx]) ** q for idx, coef, q in spec.penalty_power)


def _coordinate_interval(domain, j):
    """Interval constraint for coordinate j when it is separable, else None."""
    if isinstance(domain, Box):
        return domain.bounds[j]
    if isinstance(domain, Product):
        off = 0
        for part in domain.parts:
            if off <= j < off + part.dim:
                return _coordinate_interval(part, j - off)
            off += part.dim
    return None


def _prox_power(x, coef, q, step, lo, hi):
    """argmax over t in [lo, hi] of -(t-x)^2/(2 step) - coef |t|^q.

    The maximizer always lies between 0 and x (shrinkage), so the search
    bracket is finite even on unbounded coordinate intervals.
    """
    def val(t):
        return -((t - x) ** 2) / (2.0 * step) - coef * abs(t) ** q

    cands = [min(max(0.0, lo), hi)]
    if q == 1.0:
        t = math.copysign(max(abs(x) - coef * step, 0.0), x)
        cands.append(min(max(t, lo), hi))
    elif x != 0.0:
        a = min(max(min(0.0, x), lo), hi)
        b = min(max(max(0.0, x), lo), hi)
        if b > a:
            cands.append(_scan_refine(val, a, b))
    return max(cands, key=val)


def _exact_scalar_power(beta, gam, d, q, lo, hi):
    """Global argmax over [lo, hi] of beta*t - gam*t^2/2 - d*|t|^q.

    Handles the kink at zero explicitly: each sign branch contributes at
    most one local maximum, found in closed form for q = 1 and by a
    bracketed bisection of the stationarity equation for q < 1.
    """
    def val(t):
        return beta * t - 0.5 * gam * t * t - d * abs(t) ** q

    cands = []
    if lo <= 0.0 <= hi:
        cands.append(0.0)
    for bound in (lo, hi):
        if math.isfinite(bound):
            cands.append(bound)

    for sign in (1.0, -1.0):
        b = beta * sign
        if q == 1.0:
            t = (b - d) / gam
            if t > 0:
                cands.append(min(max(sign * t, lo), hi))
            continue
        if d <= 0.0:
            if b > 0:
                cands.append(min(max(sign * b / gam, lo), hi))
            continue
        # h'(t) = b - gam t - d q t^{q-1} on t > 0 peaks at t_m
        t_m = (d * q * (1.0 - q) / gam) ** (1.0 / (2.0 - q))
        if b - gam * t_m - d * q * t_m ** (q - 1.0) <= 0.0:
            continue
        a, c = t_m, 2.0 * max(t_m, b / gam)
        while b - gam * c - d * q * c ** (q - 1.0) > 0.0:
            c *= 2.0
        for _ in range(200):
            mid = 0.5 * (a + c)
            if b - gam * mid - d * q * mid ** (q - 1.0) > 0.0:
                a = mid
            else:
                c = mid
            if c - a < 1e-14 * (1.0 + c):
                break
        cands.append(min(max(sign * 0.5 * (a + c), lo), hi))
    return max(cands, key=val)


def _scan_refine(f, lo, hi, n_scan=40, iters=60):
    """Coarse scan plus golden-section refinement for a scalar maximum."""
    xs = np.linspace(lo, hi, n_scan)
    vals = [f(x) for x in xs]
    i = int(np.argmax(vals))
    a = xs[max(i - 1, 0)]
    b = xs[min(i + 1, n_scan - 1)]
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - phi * (b - a)
    dpt = a + phi * (b - a)
    fc, fd = f(c), f(dpt)
    for _ in range(iters):
        if fc > fd:
            b, dpt, fd = dpt, c, fc
            c = b - phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, dpt, fd
            dpt = a + phi * (b - a)
            fd = f(dpt)
    return 0.5 * (a + b)


def _sweep_separable(spec, d, u, powered, domain):
    """Exact 1-D solves over power-penalized coordinates with interval domains.

    Only valid for coordinates the pre-map passes through linearly; the
    field restricted to such a coordinate is quadratic minus the power term.
    """
    u = np.array(u, dtype=float)
    sq_idx = spec.pre_map.index if isinstance(spec.pre_map, SquareCoord) else None
    jdiag = spec.pre_map.jacobian_diag(np.ones(spec.dim))
    lin = np.zeros(spec.dim)
    for idx, coef in spec.penalty_linear:
        lin[idx] += coef
    for idx, (coef, q) in powered.items():
        if idx == sq_idx:
            continue
        iv = _coordinate_interval(domain, idx)
        if iv is None:
            continue
        bk = jdiag[idx]
        gam = d.gamma[idx, idx] * bk * bk
        if gam <= 0.0:
            # coordinate absent from the smooth part: penalty alone decides
            u[idx] = min(max(0.0, iv[0]), iv[1])
            continue
        m = spec.pre_map.apply(u)
        m[idx] = 0.0
        beta = bk * (d.delta[idx] - d.gamma[idx] @ m) - lin[idx]
        u[idx] = _exact_scalar_power(beta, gam, coef, q, iv[0], iv[1])
    return u


def _ascent_direction(spec, d, u, grad):
    """Newton direction on the smooth part, gradient fallback if indefinite."""
    p = spec.dim
    jd = spec.pre_map.jacobian_diag(u)
    curv = d.gamma * np.outer(jd, jd)
    if isinstance(spec.pre_map, SquareCoord):
        j = spec.pre_map.index
        m = spec.pre_map.apply(u)
        curv[j, j] -= 2.0 * float(d.delta[j] - d.gamma[j] @ m)
    act = spec.pre_map.active(p)
    for j in np.flatnonzero(~act):
        curv[j, :] = 0.0
        curv[:, j] = 0.0
        curv[j, j] = 1.0
    try:
        direction = np.linalg.solve(curv + 1e-12 * np.eye(p), grad)
    except np.linalg.LinAlgError:
        return grad
    return direction if direction @ grad > 0.0 else grad


def _polish(spec, d, u0, max_iter=MAX_ITER):
    """Monotone proximal projected-ascent from one start."""
    domain = spec.domain
    u = domain.project(np.asarray(u0, dtype=float)) if domain.has_projection() else np.asarray(u0, dtype=float)
    powered = {idx: (coef, q) for idx, coef, q in spec.penalty_power}
    pair = _parabolic_pair(spec) if powered else None
    fval = log_field(spec, d, u)
    step = 1.0
    for _ in range(max_iter):
        improved = False
        if powered:
            swept = _sweep_separable(spec, d, u, powered, domain)
            if pair is not None:
                swept = _sweep_parabolic(spec, d, swept, pair)
            if domain.has_projection():
                swept = domain.project(swept)
            sval = log_field(spec, d, swept)
            if sval > fval + VALUE_TOL * (1.0 + abs(fval)):
                u, fval = swept, sval
                improved = True
        _, grad = _smooth_value_grad(spec, d, u)
        direction = _ascent_direction(spec, d, u, grad)
        while step >= STEP_FLOOR:
            cand = u + step * direction
            for idx, (coef, q) in powered.items():
                iv = _coordinate_interval(domain, idx)
                lo, hi = iv if iv is not None else (-math.inf, math.inf)
                cand[idx] = _prox_power(cand[idx], coef, q, step, lo, hi)
            if domain.has_projection():
                cand = domain.project(cand)
            cval = log_field(spec, d, cand)
            if cval > fval + VALUE_TOL * (1.0 + abs(fval)):
                u, fval = cand, cval
                step = min(step * 2.0, 16.0)
                improved = True
                break
            step *= 0.5
        if not improved:
            break
    return u, fval


def _exact_candidates(spec, d):
    """Closed-form candidates exploiting the structure of the shipped specs."""
    out = []
    p = spec.dim
    pm = spec.pre_map
    lin = np.zeros(p)
    for idx, coef in spec.penalty_linear:
        lin[idx] += coef
    power_idx = {idx for idx, coef, q in spec.penalty_power if coef > 0}

    if isinstance(pm, Identity) and not power_idx:
        try:
            u = np.linalg.solve(d.gamma, d.delta - lin)
            out.append(u)
        except np.linalg.LinAlgError:
            pass

    if isinstance(pm, SquareCoord) and not power_idx and not spec.penalty_linear:
        # maximize in m-space where the squared coordinate becomes m >= 0
        j = pm.index
        try:
            m_free = np.linalg.solve(d.gamma, d.delta)
            if m_free[j] >= 0.0:
                u = m_free.copy()
                u[j] = math.sqrt(m_free[j])
                out.append(u)
            keep = [i for i in range(p) if i != j]
            sub = np.linalg.solve(d.gamma[np.ix_(keep, keep)], d.delta[keep])
            u = np.zeros(p)
            u[keep] = sub
            out.append(u)
        except np.linalg.LinAlgError:
            pass

    if isinstance(pm, DiagonalMap):
        act = pm.active(p)
        keep = np.flatnonzero(act)
        try:
            sub = np.linalg.solve(
                d.gamma[np.ix_(keep, keep)], (d.delta - lin)[keep]
            )
            u = np.zeros(p)
            u[keep] = sub
            out.append(u)
        except np.linalg.LinAlgError:
            pass

    # face candidates: zero out each power-penalized coordinate
    for j in sorted(power_idx):
        for base in list(out):
            u = np.array(base, dtype=float)
            u[j] = 0.0
            out.append(u)
    return out


def _parabolic_pair(spec):
    """Locate a coupled (i_sq, i_lin) pair eligible for boundary substitution.

    Eligible means: the linear coordinate is annihilated by the pre-map and
    carries a positive power penalty, so every maximizer sits on the
    parabola coef * u_lin = u_sq^2 and u_lin can be substituted out.
    """
    domain = spec.domain
    parts = domain.parts if isinstance(domain, Product) else (domain,)
    off = 0
    found = None
    for part in parts:
        if isinstance(part, Parabolic):
            found = (part, off)
        off += part.dim
    if found is None:
        return None
    part, off = found
    i_sq, i_lin = part.i_sq + off, part.i_lin + off
    act = spec.pre_map.active(spec.dim)
    if act[i_lin] or not act[i_sq]:
        return None
    pen = [(c, q) for idx, c, q in spec.penalty_power if idx == i_lin and c > 0]
    if not pen or any(idx == i_sq for idx, _, _ in spec.penalty_power):
        return None
    coef_pen, q = pen[0]
    return part, i_sq, i_lin, coef_pen, q


def _sweep_parabolic(spec, d, u, pair):
    """Exact joint update of the coupled pair: on the parabola the power
    penalty becomes d * coef^{-q} |u_sq|^{2q}, a scalar power problem."""
    part, i_sq, i_lin, coef_pen, q = pair
    u = np.array(u, dtype=float)
    lin = 0.0
    for idx, c in spec.penalty_linear:
        if idx == i_sq:
            lin += c
    m = spec.pre_map.apply(u)
    m[i_sq] = 0.0
    beta = float(d.delta[i_sq] - d.gamma[i_sq] @ m) - lin
    gam = float(d.gamma[i_sq, i_sq])
    x = _exact_scalar_power(beta, gam, coef_pen * part.coef ** (-q), 2.0 * q,
                            -math.inf, math.inf)
    u[i_sq] = x
    u[i_lin] = x * x / part.coef
    return u


def argmax(spec: LimitField, d: FieldDraw, rng: np.random.Generator | None = None,
           n_random_starts: int = 6, n_probe: int = 1000):
    """Maximize the log-field over the spec's domain; multi-start consensus."""
    if not spec.domain.is_limit_kind:
        raise DomainError("argmax requires a limit-kind (closed) domain")
    spec.validate_coercive(d.gamma)
    rng = rng if rng is not None else np.random.default_rng(0)

    starts = [np.zeros(spec.dim)]
    starts.extend(_exact_candidates(spec, d))
    scale = 1.0 + float(np.linalg.norm(d.delta))
    for _ in range(n_random_starts):
        starts.append(rng.normal(scale=scale, size=spec.dim))

    cands = []
    for s in starts:
        try:
            u, v = _polish(spec, d, s)
        except NonConvergenceError:
            continue
        cands.append((u, v))
    if not cands:
        raise NonConvergenceError("all starts failed", candidates=cands)

    cands.sort(key=lambda t: -t[1])
    u_best, v_best = cands[0]

    # probe dominance: random projected points must not beat the maximizer
    probes = (
        spec.domain.sample(max(4.0, 2.0 * scale), n_probe, rng) if n_probe > 0 else ()
    )
    for w in probes:
        vw = log_field(spec, d, w)
        if vw > v_best + 1e-6:
            u2, v2 = _polish(spec, d, w)
            if v2 > v_best + CONSENSUS_TOL:
                cands.insert(0, (u2, v2))
                raise NonConvergenceError(
                    f"probe beat refined maximum by {v2 - v_best:.3e}",
                    candidates=cands,
                )
            if v2 > v_best:
                u_best, v_best = u2, v2

    u_best = _canonicalize(spec, u_best)

    # a distinct point with an (exactly) equal value is an ambiguous maximizer;
    # near-ties from nearly-active constraints are not flagged
    for u, v in cands[1:]:
        if v_best - v <= 1e-13 * (1.0 + abs(v_best)):
            if np.linalg.norm(_canonicalize(spec, u) - u_best) > 1e-2 * (1.0 + np.linalg.norm(u_best)):
                raise NonConvergenceError("tied maximizers at distinct points", candidates=cands)
    return u_best


def _canonicalize(spec, u):
    """Sign convention for squared coordinates: report the nonnegative root."""
    u = np.array(u, dtype=float)
    if isinstance(spec.pre_map, SquareCoord):
        j = spec.pre_map.index
        u[j] = abs(u[j])
    # snap exact zeros produced by face candidates
    u[np.abs(u) < 1e-14] = 0.0
    return u


def simulate_limit(spec: LimitField, n_draws: int, rng: np.random.Generator,
                   n_random_starts: int = 4, n_probe: int = 0) -> np.ndarray:
    """Matrix of maximizer draws (one row each) plus a trailing value column."""
    if n_draws < 1:
        raise DomainError("n_draws must be >= 1")
    streams = rng.spawn(n_draws)
    out = np.empty((n_draws, spec.dim + 1))
    for i, child in enumerate(streams):
        dr = draw(spec, child)
        u = argmax(spec, dr, rng=child, n_random_starts=n_random_starts,
                   n_probe=n_probe)
        out[i, : spec.dim] = u
        out[i, spec.dim] = log_field(spec, dr, u)
    return out
