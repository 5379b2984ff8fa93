"""Effect estimators: plain group means and covariate-adjusted regression.

The adjusted estimator regresses the observed response on the three
group indicators plus the covariate, with no intercept.  Two fully
independent computation routes are provided and cross-checked in tests:

* :func:`mr_estimates` works with explicit residual vectors: ``e`` is
  the response with group means removed, ``f`` the covariate with group
  means removed, and the adjustment slope is ``e.f / |f|^2``.
* :func:`mr_via_normal_equations` assembles the 4x4 cross-product
  system from raw sums and solves it through the Schur complement on
  the covariate row (the matrix is diagonal-plus-border, so the solve
  is closed-form).

Both return the same :class:`MREstimate` contract, including the
conventional ("nominal") covariance matrix, which randomization does
not actually justify; calibrating it is the point of the package.
"""

import math
from dataclasses import dataclass

import numpy as np

from .assignment import Assignment, GroupSizes, _check_group

#: An assignment is singular when the mean square of the within-group
#: centered covariate falls below this.  True singularity (covariate in
#: the span of the group dummies) is exact; the slack absorbs roundoff.
SINGULARITY_TOL = 1e-12


class SingularDesignError(ValueError):
    """The covariate is collinear with the group dummies for this assignment."""

    def __init__(self, message="singular design"):
        super().__init__(message)


@dataclass(frozen=True)
class EffectEstimate:
    """Unadjusted (intention-to-treat) effect estimates: group means of Y."""

    effect_a: float
    effect_b: float
    effect_c: float

    def as_vector(self) -> np.ndarray:
        return np.array([self.effect_a, self.effect_b, self.effect_c])

    def effect(self, group: str) -> float:
        return float(self.as_vector()[_check_group(group)])


@dataclass(frozen=True)
class MREstimate:
    """Covariate-adjusted estimates plus the pieces behind them.

    ``q_hat`` is the adjustment slope (residual response on residual
    covariate); ``z_coefficient`` is the covariate coefficient of the
    full four-column regression.  They agree algebraically; keeping both
    makes the agreement testable.  ``residual_sq_e``, ``residual_sq_f``
    and ``residual_ef`` are |e|^2, |f|^2 and e.f.  ``sigma_hat_sq`` and
    ``nominal_cov`` are None when n <= 4 (no residual degrees of
    freedom).
    """

    effect_a: float
    effect_b: float
    effect_c: float
    q_hat: float
    z_coefficient: float
    sigma_hat_sq: float | None
    nominal_cov: np.ndarray | None
    residual_sq_e: float
    residual_sq_f: float
    residual_ef: float
    n: int
    sizes: GroupSizes
    z_group_means: np.ndarray
    z_sum_sq: float

    def as_vector(self) -> np.ndarray:
        return np.array([self.effect_a, self.effect_b, self.effect_c])

    def effect(self, group: str) -> float:
        return float(self.as_vector()[_check_group(group)])


def itt_estimates(Y, asg: Assignment) -> EffectEstimate:
    """Group means of the observed response."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.shape != (asg.n,):
        raise ValueError(f"length mismatch: expected {asg.n} responses, got {Y.shape}")
    sums = np.bincount(asg.codes, weights=Y, minlength=3)
    return EffectEstimate(*(sums / asg.sizes.counts()))


def effect_difference(est, s: str, t: str) -> float:
    """effect(t) - effect(s); the estimate of the t-versus-s contrast."""
    if s == t:
        raise ValueError(f"groups must differ, got {s!r} twice")
    return est.effect(t) - est.effect(s)


def _design_inverse(counts: np.ndarray, zbar: np.ndarray, f_sq: float) -> np.ndarray:
    # closed-form inverse of X'X (diagonal counts bordered by covariate
    # sums); f_sq is the Schur complement of the covariate row
    inv = np.diag(1.0 / counts) + np.outer(zbar, zbar) / f_sq
    out = np.empty((4, 4))
    out[:3, :3] = inv
    out[:3, 3] = out[3, :3] = -zbar / f_sq
    out[3, 3] = 1.0 / f_sq
    return out


def _assemble(effects, q_hat, z_coefficient, e_sq, f_sq, ef, n, sizes, zbar, z_sum_sq):
    if n > 4:
        sigma_sq = (e_sq - q_hat * q_hat * f_sq) / (n - 4)
        nominal = sigma_sq * _design_inverse(sizes.counts().astype(float), zbar, f_sq)
        nominal.setflags(write=False)
    else:
        sigma_sq = None
        nominal = None
    zbar = np.asarray(zbar, dtype=np.float64).copy()
    zbar.setflags(write=False)
    return MREstimate(
        effect_a=float(effects[0]),
        effect_b=float(effects[1]),
        effect_c=float(effects[2]),
        q_hat=float(q_hat),
        z_coefficient=float(z_coefficient),
        sigma_hat_sq=None if sigma_sq is None else float(sigma_sq),
        nominal_cov=nominal,
        residual_sq_e=float(e_sq),
        residual_sq_f=float(f_sq),
        residual_ef=float(ef),
        n=n,
        sizes=sizes,
        z_group_means=zbar,
        z_sum_sq=float(z_sum_sq),
    )


def _validated(z, Y, asg: Assignment):
    z = np.asarray(z, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if z.shape != (asg.n,) or Y.shape != (asg.n,):
        raise ValueError("covariate/response length must match the assignment")
    return z, Y


def mr_estimates(z, Y, asg: Assignment) -> MREstimate:
    """Adjusted estimates via explicit residual vectors."""
    z, Y = _validated(z, Y, asg)
    sizes = asg.sizes
    counts = sizes.counts()
    ybar = np.bincount(asg.codes, weights=Y, minlength=3) / counts
    zbar = np.bincount(asg.codes, weights=z, minlength=3) / counts
    e = Y - ybar[asg.codes]
    f = z - zbar[asg.codes]
    f_sq = float(f @ f)
    if f_sq <= SINGULARITY_TOL * asg.n:
        raise SingularDesignError()
    ef = float(e @ f)
    q_hat = ef / f_sq
    effects = ybar - q_hat * zbar
    return _assemble(
        effects, q_hat, q_hat, float(e @ e), f_sq, ef, asg.n, sizes, zbar, float(z @ z)
    )


def mr_via_normal_equations(z, Y, asg: Assignment) -> MREstimate:
    """Adjusted estimates via the bordered cross-product system.

    Builds the raw sums behind X'X and X'Y and eliminates the covariate
    row by its Schur complement; never forms residual vectors.
    """
    z, Y = _validated(z, Y, asg)
    sizes = asg.sizes
    counts = sizes.counts().astype(float)
    t = np.bincount(asg.codes, weights=Y, minlength=3)  # response sums per group
    g = np.bincount(asg.codes, weights=z, minlength=3)  # covariate sums per group
    u = float(z @ Y)
    h = float(z @ z)
    schur = h - float(np.sum(g * g / counts))
    if schur <= SINGULARITY_TOL * asg.n:
        raise SingularDesignError()
    ef = u - float(np.sum(g * t / counts))
    z_coefficient = ef / schur
    effects = (t - g * z_coefficient) / counts
    e_sq = float(Y @ Y) - float(np.sum(t * t / counts))
    q_hat = ef / schur
    return _assemble(
        effects, q_hat, z_coefficient, e_sq, schur, ef, asg.n, sizes, g / counts, h
    )


def nominal_covariance(est: MREstimate, n: int) -> tuple[np.ndarray, float]:
    """Conventional covariance matrix sigma^2 (X'X)^-1 and sigma^2.

    sigma^2 divides the squared residual norm by n - 4 and uses the
    orthogonality identity |e - q f|^2 = |e|^2 - q^2 |f|^2.
    """
    if n != est.n:
        raise ValueError(f"estimate was computed from n={est.n}, got n={n}")
    if n <= 4:
        raise ValueError("insufficient degrees of freedom")
    sigma_sq = (est.residual_sq_e - est.q_hat**2 * est.residual_sq_f) / (n - 4)
    cov = sigma_sq * _design_inverse(
        est.sizes.counts().astype(float), est.z_group_means, est.residual_sq_f
    )
    return cov, float(sigma_sq)


class BatchEvaluator:
    """Vectorized evaluation of both estimators over many assignments.

    Precomputes the per-population products once; each call then needs
    only group sums, either from label codes (enumeration) or from an
    index matrix whose leading columns are the A then B then C members
    (sampling).  Rows whose design is singular come back with ``valid``
    False and NaN estimates; callers decide whether to drop or redraw.
    """

    def __init__(self, pop, sizes: GroupSizes, q_tilde: float | None = None):
        sizes.validate_for(pop.n)
        self.n = pop.n
        self.sizes = sizes
        self.counts = sizes.counts().astype(float)
        self.z = pop.z
        self.responses = (pop.a, pop.b, pop.c)
        self.products = (pop.a * pop.z, pop.b * pop.z, pop.c * pop.z)
        self.squares = (pop.a * pop.a, pop.b * pop.b, pop.c * pop.c)
        self.z_sum_sq = float(pop.z @ pop.z)
        # exactly rounded means: engine biases are gated at 1e-12
        self.truth = np.array([math.fsum(x) / self.n for x in self.responses])
        self.q_tilde = q_tilde

    def _from_group_sums(self, t, g, u, ysq, sum_az_a, want_nominal, want_zeta):
        n = self.n
        counts = self.counts
        ybar = t / counts
        zbar = g / counts
        f_sq = self.z_sum_sq - (g * g / counts).sum(axis=1)
        valid = f_sq > SINGULARITY_TOL * n
        safe_f = np.where(valid, f_sq, np.nan)
        ef = u - (g * t / counts).sum(axis=1)
        q = ef / safe_f
        mr = ybar - q[:, None] * zbar
        itt = ybar
        e_sq = ysq - (t * t / counts).sum(axis=1)
        sigma_sq = (e_sq - q * q * f_sq) / (n - 4) if n > 4 else np.full(len(q), np.nan)
        out = {
            "itt": itt,
            "mr": mr,
            "q_hat": q,
            "sigma_hat_sq": sigma_sq,
            "valid": valid,
            "sum_az_a": sum_az_a,
        }
        if want_nominal:
            inv = np.empty((q.shape[0], 4, 4))
            inv[:, :3, :3] = (zbar[:, :, None] * zbar[:, None, :]) / safe_f[:, None, None]
            idx = np.arange(3)
            inv[:, idx, idx] += 1.0 / counts
            inv[:, :3, 3] = inv[:, 3, :3] = -zbar / safe_f[:, None]
            inv[:, 3, 3] = 1.0 / safe_f
            out["nominal_cov"] = sigma_sq[:, None, None] * inv
        if want_zeta:
            if self.q_tilde is None:
                raise ValueError("zeta requested but no q_tilde supplied")
            dev = ybar - self.truth
            out["zeta"] = np.sqrt(n) * (dev - self.q_tilde * zbar)
        return out

    def evaluate_codes(self, codes: np.ndarray, want_nominal=False, want_zeta=False):
        codes = np.asarray(codes)
        masks = [(codes == k).astype(np.float64) for k in range(3)]
        z = self.z
        t = np.empty((codes.shape[0], 3))
        g = np.empty_like(t)
        u = np.zeros(codes.shape[0])
        ysq = np.zeros(codes.shape[0])
        for k in range(3):
            w = np.column_stack([self.responses[k], self.products[k], self.squares[k], z])
            sums = masks[k] @ w
            t[:, k] = sums[:, 0]
            u += sums[:, 1]
            ysq += sums[:, 2]
            g[:, k] = sums[:, 3]
        sum_az_a = (masks[0] @ self.products[0]) / self.counts[0]
        return self._from_group_sums(t, g, u, ysq, sum_az_a, want_nominal, want_zeta)

    def evaluate_index(self, idx: np.ndarray, want_nominal=False, want_zeta=False):
        n_a, n_b, _ = self.sizes.counts()
        blocks = (idx[:, :n_a], idx[:, n_a : n_a + n_b], idx[:, n_a + n_b :])
        t = np.empty((idx.shape[0], 3))
        g = np.empty_like(t)
        u = np.zeros(idx.shape[0])
        ysq = np.zeros(idx.shape[0])
        for k, block in enumerate(blocks):
            t[:, k] = self.responses[k][block].sum(axis=1)
            u += self.products[k][block].sum(axis=1)
            ysq += self.squares[k][block].sum(axis=1)
            g[:, k] = self.z[block].sum(axis=1)
        sum_az_a = self.products[0][blocks[0]].sum(axis=1) / self.counts[0]
        return self._from_group_sums(t, g, u, ysq, sum_az_a, want_nominal, want_zeta)
