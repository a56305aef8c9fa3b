"""Constraint regions for local approximation of parameter spaces.

A region is an immutable, symbolic description of a closed subset of R^p
with exact membership tests. Geometry statistics (directed gaps, cone
checks, selection-geometry ratios) are Monte Carlo estimates built on top
of membership, projection, and sampling.

Symmetric matrices are flattened row-wise over the upper triangle:
(A11, ..., A1m, A22, ..., A2m, ..., Amm).
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSamplingError, DomainError, NonConvergenceError

CONTAINS_TOL = 1e-12


# ---------------------------------------------------------------------------
# half-vectorization
# ---------------------------------------------------------------------------

def sym_dim(m: int) -> int:
    return m * (m + 1) // 2


def order_from_half_dim(p: int) -> int:
    m = int((math.isqrt(8 * p + 1) - 1) // 2)
    if sym_dim(m) != p:
        raise ValueError(f"{p} is not a triangular number")
    return m


def sym_to_half(a: np.ndarray) -> np.ndarray:
    """Row-wise upper-triangle entries of a symmetric matrix."""
    a = np.asarray(a, dtype=float)
    m = a.shape[0]
    return a[np.triu_indices(m)].copy()


def half_to_sym(v: np.ndarray, m: int | None = None) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if m is None:
        m = order_from_half_dim(v.size)
    out = np.zeros((m, m))
    iu = np.triu_indices(m)
    out[iu] = v
    out.T[iu] = v
    return out


# ---------------------------------------------------------------------------
# rate schedules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateSchedule:
    """Per-coordinate scaling exponents: coordinate j contracts as T^(-e_j/2)."""

    exponents: np.ndarray

    def __post_init__(self):
        e = np.atleast_1d(np.asarray(self.exponents, dtype=float))
        if np.any(e <= 0) or not np.all(np.isfinite(e)):
            raise DomainError("rate exponents must be positive and finite")
        object.__setattr__(self, "exponents", e)

    @property
    def dim(self) -> int:
        return self.exponents.size

    def scale(self, t: float) -> np.ndarray:
        """Diagonal of the normalizing matrix at horizon t."""
        if t <= 1.0:
            raise DomainError("horizon must exceed 1")
        return np.power(t, -self.exponents / 2.0)

    def matrix(self, t: float) -> np.ndarray:
        return np.diag(self.scale(t))

    def slowest_squared(self, t: float) -> float:
        """Smallest eigenvalue of (a_t' a_t)^{-1}, i.e. t^{min e}."""
        return float(np.power(t, self.exponents.min()))


# ---------------------------------------------------------------------------
# regions
# ---------------------------------------------------------------------------

class Region:
    """Base class; subclasses fill in dim, contains, and sample."""

    dim: int
    is_limit_kind: bool = True

    def contains(self, u, tol: float = CONTAINS_TOL) -> bool:
        raise NotImplementedError

    def project(self, u) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no projection")

    def has_projection(self) -> bool:
        cls = type(self)
        return cls.project is not Region.project

    def repair(self, u) -> np.ndarray | None:
        """Some feasible point near u, or None; used for distance upper bounds."""
        if self.has_projection():
            return self.project(u)
        return None

    def sample(self, radius: float, n: int, rng: np.random.Generator) -> np.ndarray:
        """n points in region ∩ closed ball of the given radius."""
        return self._rejection_sample(radius, n, rng)

    def _rejection_sample(self, radius, n, rng, max_batches=400):
        out = []
        got = 0
        for _ in range(max_batches):
            cand = rng.uniform(-radius, radius, size=(max(n, 256), self.dim))
            norms = np.linalg.norm(cand, axis=1)
            cand = cand[norms <= radius]
            for row in cand:
                if self.contains(row):
                    out.append(row)
                    got += 1
                    if got >= n:
                        return np.array(out)
        if not out:
            raise DegenerateSamplingError(
                f"no points of {type(self).__name__} found in ball radius {radius}"
            )
        return np.array(out)

    def to_config(self) -> dict:
        raise NotImplementedError(f"{type(self).__name__} is not serializable")


@dataclass(frozen=True)
class Box(Region):
    """Product of closed intervals; bounds may be infinite or degenerate."""

    bounds: tuple

    def __post_init__(self):
        bnds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        for lo, hi in bnds:
            if lo > hi:
                raise DomainError(f"empty interval [{lo}, {hi}]")
        object.__setattr__(self, "bounds", bnds)

    @property
    def dim(self) -> int:
        return len(self.bounds)

    def contains(self, u, tol=CONTAINS_TOL):
        u = np.asarray(u, dtype=float)
        if u.size != self.dim:
            raise DomainError("dimension mismatch")
        for x, (lo, hi) in zip(u, self.bounds):
            if x < lo - tol or x > hi + tol:
                return False
        return True

    def project(self, u):
        u = np.asarray(u, dtype=float)
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        return np.clip(u, lo, hi)

    def sample(self, radius, n, rng):
        lo = np.array([max(b[0], -radius) for b in self.bounds])
        hi = np.array([min(b[1], radius) for b in self.bounds])
        if np.any(lo > hi):
            raise DegenerateSamplingError("box does not meet the sampling ball")
        out = []
        for _ in range(400):
            cand = rng.uniform(lo, hi, size=(max(4 * n, 256), self.dim))
            cand = cand[np.linalg.norm(cand, axis=1) <= radius]
            out.extend(cand[: n - len(out)])
            if len(out) >= n:
                return np.array(out)
        if not out:
            raise DegenerateSamplingError("box sampling failed inside the ball")
        return np.array(out)

    def to_config(self):
        return {"kind": "box", "bounds": [list(b) for b in self.bounds]}


def half_line_box(p: int, nonneg_indices=(), zero_indices=()) -> Box:
    """R^p with selected coordinates restricted to [0, inf) or pinned to 0."""
    bounds = []
    for j in range(p):
        if j in zero_indices:
            bounds.append((0.0, 0.0))
        elif j in nonneg_indices:
            bounds.append((0.0, math.inf))
        else:
            bounds.append((-math.inf, math.inf))
    return Box(tuple(bounds))


@dataclass(frozen=True)
class PsdBall(Region):
    """Half-vectorized {A PSD, ||A||_F <= norm_bound}; the matrix parameter space."""

    m: int
    norm_bound: float = math.inf

    @property
    def dim(self) -> int:
        return sym_dim(self.m)

    def contains(self, u, tol=CONTAINS_TOL):
        u = np.asarray(u, dtype=float)
        if u.size != self.dim:
            raise DomainError("dimension mismatch")
        a = half_to_sym(u, self.m)
        if np.linalg.norm(a) > self.norm_bound + tol:
            return False
        return float(np.linalg.eigvalsh(a)[0]) >= -tol

    def project(self, u):
        a = half_to_sym(np.asarray(u, dtype=float), self.m)
        vals, vecs = np.linalg.eigh(a)
        a = (vecs * np.maximum(vals, 0.0)) @ vecs.T
        nrm = np.linalg.norm(a)
        if nrm > self.norm_bound:
            a *= self.norm_bound / nrm
        return sym_to_half(a)

    def to_config(self):
        return {"kind": "psd-ball", "m": self.m, "norm_bound": self.norm_bound}


class PsdTangentCone(Region):
    """Half-vectorized {w symmetric : K' w K PSD} for a fixed kernel basis K.

    When the kernel is trivial (K has zero columns) the region is all of
    the half-vectorized symmetric matrices.
    """

    def __init__(self, m: int, kernel_basis: np.ndarray):
        self.m = int(m)
        k = np.asarray(kernel_basis, dtype=float).reshape(self.m, -1)
        self.kernel_basis = k
        if k.shape[1] > 0:
            # Orthonormalize so the congruence K'wK and the block rotation
            # agree; completion gives the full change of basis.
            q, _ = np.linalg.qr(k)
            self._k_on = q
            full = np.eye(self.m)
            proj = full - q @ q.T
            vals, vecs = np.linalg.eigh(proj)
            comp = vecs[:, vals > 0.5]
            self._basis = np.hstack([comp, q])  # kernel block sits last
        else:
            self._k_on = k
            self._basis = np.eye(self.m)

    @property
    def dim(self) -> int:
        return sym_dim(self.m)

    @property
    def kernel_dim(self) -> int:
        return self.kernel_basis.shape[1]

    def contains(self, u, tol=CONTAINS_TOL):
        u = np.asarray(u, dtype=float)
        if u.size != self.dim:
            raise DomainError("dimension mismatch")
        if self.kernel_dim == 0:
            return True
        w = half_to_sym(u, self.m)
        block = self._k_on.T @ w @ self._k_on
        return float(np.linalg.eigvalsh(np.atleast_2d(block))[0]) >= -tol

    def project(self, u):
        # Rotate so the kernel block is trailing, clip its eigenvalues at
        # zero, rotate back; off-block entries are untouched.
        if self.kernel_dim == 0:
            return np.asarray(u, dtype=float).copy()
        w = half_to_sym(np.asarray(u, dtype=float), self.m)
        b = self._basis
        wt = b.T @ w @ b
        r = self.m - self.kernel_dim
        block = wt[r:, r:]
        vals, vecs = np.linalg.eigh(np.atleast_2d(block))
        wt[r:, r:] = (vecs * np.maximum(vals, 0.0)) @ vecs.T
        return sym_to_half(b @ wt @ b.T)

    def sample(self, radius, n, rng):
        cand = rng.uniform(-radius, radius, size=(3 * n, self.dim))
        out = []
        for row in cand:
            v = row if self.contains(row) else self.project(row)
            nrm = np.linalg.norm(v)
            if nrm > radius:
                v = v * (radius / nrm)  # cones are closed under down-scaling
            out.append(v)
            if len(out) >= n:
                break
        return np.array(out)

    def to_config(self):
        return {
            "kind": "psd-tangent-cone",
            "m": self.m,
            "kernel_basis": self.kernel_basis.tolist(),
        }


@dataclass(frozen=True)
class Parabolic(Region):
    """{u : coef * u[i_lin] - u[i_sq]^2 >= 0}, other coordinates free."""

    dim_: int
    coef: float
    i_sq: int
    i_lin: int

    def __post_init__(self):
        if self.coef <= 0:
            raise DomainError("parabolic coefficient must be positive")

    @property
    def dim(self) -> int:
        return self.dim_

    def _residual(self, u):
        return self.coef * u[self.i_lin] - u[self.i_sq] ** 2

    def contains(self, u, tol=CONTAINS_TOL):
        u = np.asarray(u, dtype=float)
        if u.size != self.dim:
            raise DomainError("dimension mismatch")
        return self._residual(u) >= -tol

    def project(self, u, max_iter=100, tol=1e-10):
        u = np.asarray(u, dtype=float).copy()
        if self.contains(u, tol=0.0):
            return u
        y, x = u[self.i_sq], u[self.i_lin]
        c = self.coef
        if y == 0.0:
            u[self.i_lin] = max(x, 0.0)
            return u
        # KKT for min |v-u|^2 on the boundary c v_lin = v_sq^2:
        # v_sq = y/(1+2*mu), v_lin = x + mu*c, with mu >= 0 the multiplier.
        def resid(mu):
            return (y / (1.0 + 2.0 * mu)) ** 2 - c * (x + mu * c)

        lo_mu, hi_mu = 0.0, 1.0
        it = 0
        while resid(hi_mu) > 0:
            hi_mu *= 2.0
            it += 1
            if it > 200:
                raise NonConvergenceError(
                    f"parabolic projection bracket failed, residual {resid(hi_mu)!r}"
                )
        for _ in range(max_iter):
            mid = 0.5 * (lo_mu + hi_mu)
            if resid(mid) > 0:
                lo_mu = mid
            else:
                hi_mu = mid
            if hi_mu - lo_mu < tol * (1.0 + hi_mu):
                break
        mu = 0.5 * (lo_mu + hi_mu)
        r = resid(mu)
        if abs(r) > 1e-6 * (1.0 + abs(x) + y * y):
            raise NonConvergenceError(f"parabolic projection stalled, residual {r!r}")
        u[self.i_sq] = y / (1.0 + 2.0 * mu)
        u[self.i_lin] = x + mu * c
        return u

    def sample(self, radius, n, rng):
        out = []
        for _ in range(400):
            cand = rng.uniform(-radius, radius, size=(4 * n, self.dim))
            floor = cand[:, self.i_sq] ** 2 / self.coef
            keep = floor <= radius
            cand = cand[keep]
            lo = floor[keep]
            cand[:, self.i_lin] = rng.uniform(lo, radius)
            cand = cand[np.linalg.norm(cand, axis=1) <= radius]
            out.extend(cand[: n - len(out)])
            if len(out) >= n:
                return np.array(out)
        if not out:
            raise DegenerateSamplingError("parabolic sampling failed")
        return np.array(out)

    def to_config(self):
        return {
            "kind": "parabolic",
            "dim": self.dim_,
            "coef": self.coef,
            "i_sq": self.i_sq,
            "i_lin": self.i_lin,
        }


class Product(Region):
    """Concatenation of independent regions."""

    def __init__(self, parts):
        self.parts = tuple(parts)
        self._dims = [p.dim for p in self.parts]
        self._offsets = np.concatenate([[0], np.cumsum(self._dims)])

    @property
    def dim(self) -> int:
        return int(self._offsets[-1])

    def _split(self, u):
        u = np.asarray(u, dtype=float)
        if u.size != self.dim:
            raise DomainError("dimension mismatch")
        return [u[self._offsets[i]:self._offsets[i + 1]] for i in range(len(self.parts))]

    def contains(self, u, tol=CONTAINS_TOL):
        return all(p.contains(seg, tol) for p, seg in zip(self.parts, self._split(u)))

    def project(self, u):
        return np.concatenate([p.project(seg) for p, seg in zip(self.parts, self._split(u))])

    def sample(self, radius, n, rng):
        chunks = [p.sample(radius, n, rng) for p in self.parts]
        m = min(len(c) for c in chunks)
        cand = np.hstack([c[:m] for c in chunks])
        norms = np.linalg.norm(cand, axis=1)
        scale = np.minimum(1.0, radius / np.maximum(norms, 1e-300))
        # down-scaling keeps membership for the limit kinds used here only if
        # every part is star-shaped; fall back to rejection otherwise
        scaled = cand * scale[:, None]
        ok = np.array([self.contains(row) for row in scaled])
        if ok.all():
            return scaled
        kept = cand[norms <= radius]
        if kept.size == 0:
            raise DegenerateSamplingError("product sampling found nothing in ball")
        return kept

    def to_config(self):
        return {"kind": "product", "parts": [p.to_config() for p in self.parts]}


class ConstraintSystem(Region):
    """{u in F : f(u) >= 0 componentwise} for a base region F.

    ``plus_indices`` records which constraint components are known to be
    approached from above along the finite-scale sets; membership does not
    depend on it.
    """

    def __init__(self, base: Region, funcs, n_constraints: int, plus_indices=()):
        self.base = base
        self.funcs = funcs
        self.n_constraints = int(n_constraints)
        self.plus_indices = tuple(plus_indices)

    @property
    def dim(self) -> int:
        return self.base.dim

    def contains(self, u, tol=CONTAINS_TOL):
        u = np.asarray(u, dtype=float)
        if not self.base.contains(u, tol):
            return False
        vals = np.atleast_1d(np.asarray(self.funcs(u), dtype=float))
        if vals.size != self.n_constraints:
            raise DomainError("constraint function returned wrong length")
        return bool(np.all(vals >= -tol))


class FiniteScaleRegion(Region):
    """Rescaled neighborhood {u : center + a_t * u in ambient} at horizon t."""

    is_limit_kind = False

    def __init__(self, ambient: Region, center: np.ndarray, rate: RateSchedule, t: float):
        center = np.asarray(center, dtype=float)
        if center.size != ambient.dim or rate.dim != ambient.dim:
            raise DomainError("dimension mismatch between ambient space, center, and rate")
        if not ambient.contains(center):
            raise DomainError("center must belong to the ambient parameter space")
        self.ambient = ambient
        self.center = center
        self.rate = rate
        self.t = float(t)
        self._scale = rate.scale(self.t)

    @property
    def dim(self) -> int:
        return self.ambient.dim

    def contains(self, u, tol=CONTAINS_TOL):
        u = np.asarray(u, dtype=float)
        if u.size != self.dim:
            raise DomainError("dimension mismatch")
        return self.ambient.contains(self.center + self._scale * u, tol)

    def repair(self, u):
        if not self.ambient.has_projection():
            return None
        theta = self.ambient.project(self.center + self._scale * np.asarray(u, dtype=float))
        v = (theta - self.center) / self._scale
        return v if self.contains(v, tol=1e-9) else None

    def to_config(self):
        return {
            "kind": "finite-scale",
            "ambient": self.ambient.to_config(),
            "center": self.center.tolist(),
            "exponents": self.rate.exponents.tolist(),
            "t": self.t,
        }


def build_finite_scale(center, rate: RateSchedule, t: float, ambient: Region) -> FiniteScaleRegion:
    return FiniteScaleRegion(ambient, center, rate, t)


def region_from_constraints(base: Region, funcs, n_constraints: int, plus_indices=()) -> ConstraintSystem:
    """Explicit limit-set constructor: {u in base : funcs(u) >= 0}."""
    return ConstraintSystem(base, funcs, n_constraints, plus_indices)


def region_from_config(cfg: dict) -> Region:
    kind = cfg.get("kind")
    if kind == "box":
        return Box(tuple(tuple(b) for b in cfg["bounds"]))
    if kind == "psd-ball":
        return PsdBall(cfg["m"], cfg.get("norm_bound", math.inf))
    if kind == "psd-tangent-cone":
        return PsdTangentCone(cfg["m"], np.asarray(cfg["kernel_basis"], dtype=float))
    if kind == "parabolic":
        return Parabolic(cfg["dim"], cfg["coef"], cfg["i_sq"], cfg["i_lin"])
    if kind == "product":
        return Product([region_from_config(c) for c in cfg["parts"]])
    if kind == "finite-scale":
        return FiniteScaleRegion(
            region_from_config(cfg["ambient"]),
            np.asarray(cfg["center"], dtype=float),
            RateSchedule(np.asarray(cfg["exponents"], dtype=float)),
            cfg["t"],
        )
    raise DomainError(f"unknown region kind {kind!r}")


# ---------------------------------------------------------------------------
# geometry statistics
# ---------------------------------------------------------------------------

def _distance_to(region: Region, x: np.ndarray, radius: float, pool: np.ndarray | None) -> float:
    if region.contains(x):
        return 0.0
    best = math.inf
    v = region.repair(x)
    if v is not None:
        nrm = np.linalg.norm(v)
        if nrm > radius:
            w = v * (radius / nrm)
            v = w if region.contains(w, tol=1e-9) else None
        if v is not None:
            best = float(np.linalg.norm(x - v))
    if pool is not None and len(pool):
        best = min(best, float(np.min(np.linalg.norm(pool - x, axis=1))))
    if not math.isfinite(best):
        raise DegenerateSamplingError("no way to measure distance to region")
    return best


def hausdorff_gap(a: Region, b: Region, radius: float, n_samples: int,
                  rng: np.random.Generator) -> float:
    """Directed gap: sup over sampled x in a∩B_R of distance to b∩B_R."""
    if a.dim != b.dim:
        raise DomainError("regions must share a dimension")
    xs = a.sample(radius, n_samples, rng)
    pool = None
    if not b.has_projection():
        pool = b.sample(radius, max(256, n_samples // 4), rng)
    worst = 0.0
    for x in xs:
        worst = max(worst, _distance_to(b, x, radius, pool))
    return worst


def is_cone(region: Region, n_samples: int, rng: np.random.Generator,
            radius: float = 1.0, scales=(0.5, 2.0, 10.0), tol: float = 1e-9) -> bool:
    """True iff sampled members stay members under positive rescaling."""
    pts = region.sample(radius, n_samples, rng)
    for u in pts:
        for t in scales:
            if not region.contains(t * u, tol=tol):
                return False
    return True


def selection_geometry_ratio(region_t: FiniteScaleRegion, radius: float, delta: float,
                             j0, j0_plus, q_exponents, n_samples: int,
                             rng: np.random.Generator) -> float:
    """Monte Carlo estimate of the worst-case shrink ratio near the sparse face.

    sup over u with 0 < |u_{j0}| <= delta of
        inf over v with v_{j0} = 0 of
            (|u_rest - v_rest| + sum over unit-rate j0 coords |u_k|)
            / sum over k in j0_plus of |u_k|^{q_k}
    with both u and v constrained to the finite-scale region and |rest| <= R.
    """
    j0 = list(j0)
    j0_plus = list(j0_plus)
    q_map = dict(zip(j0_plus, q_exponents))
    p = region_t.dim
    rest = [j for j in range(p) if j not in j0]
    exps = region_t.rate.exponents
    base = exps[rest]
    if not np.allclose(base, base[0]):
        raise DomainError("non-penalized coordinates must share a rate exponent")
    rho = {k: float(exps[k] / base[0]) for k in j0}
    unit_rate = [k for k in j0 if abs(rho[k] - 1.0) < 1e-12]

    samples = []
    for _ in range(600):
        cand = rng.uniform(-radius, radius, size=(max(512, n_samples), p))
        cand[:, j0] = rng.uniform(0.0, delta, size=(cand.shape[0], len(j0)))
        signs = rng.choice([-1.0, 1.0], size=(cand.shape[0], len(j0)))
        cand[:, j0] *= signs
        for row in cand:
            if np.linalg.norm(row[rest]) > radius:
                continue
            if np.all(row[j0] == 0.0):
                continue
            if region_t.contains(row):
                samples.append(row.copy())
                if len(samples) >= n_samples:
                    break
        if len(samples) >= n_samples:
            break
    if not samples:
        raise DegenerateSamplingError("no points found near the sparse face")

    worst = 0.0
    for u in samples:
        u = _push_to_face_boundary(region_t, u, rest, radius, rng)
        denom = sum(abs(u[k]) ** q_map[k] for k in j0_plus)
        if denom <= 0:
            continue
        numer = _best_face_match(region_t, u, rest, j0, radius) + sum(
            abs(u[k]) for k in unit_rate
        )
        worst = max(worst, numer / denom)
    return worst


def _push_to_face_boundary(region_t, u, rest, radius, rng):
    """Grow one non-sparse coordinate toward infeasibility to tighten the sup."""
    j = rest[int(rng.integers(len(rest)))]

    def feasible(point):
        return np.linalg.norm(point[rest]) <= radius and region_t.contains(point)

    lo, hi = 1.0, 8.0
    v = u.copy()
    v[j] = u[j] * hi
    if feasible(v):
        return v
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        v[j] = u[j] * mid
        if feasible(v):
            lo = mid
        else:
            hi = mid
    v[j] = u[j] * lo
    return v if feasible(v) else u


def _best_face_match(region_t, u, rest, j0, radius):
    """inf |u_rest - v_rest| over sparse-face candidates v (v_{j0} = 0)."""
    best = math.inf
    candidates = [u.copy()]
    for j in rest:
        w = u.copy()
        w[j] = 0.0
        candidates.append(w)
    candidates.append(np.zeros_like(u))
    for v in candidates:
        v = v.copy()
        v[j0] = 0.0
        if np.linalg.norm(v[rest]) <= radius and region_t.contains(v):
            best = min(best, float(np.linalg.norm(u[rest] - v[rest])))
    if not math.isfinite(best):
        raise DegenerateSamplingError("sparse face has no reachable points")
    return best
