"""Distribution engines: exhaustive enumeration and seeded Monte Carlo.

Both engines evaluate the unadjusted and adjusted estimators over
assignments and reduce to summary moments.  Reductions are compensated
(Kahan-style) and merged in fixed batch order, so results are
bit-identical for any worker count; Monte Carlo batches draw from
per-batch generator streams split deterministically from the master
seed, so they are also independent of how work is scheduled.

Singular assignments (covariate collinear with the group dummies) are
excluded and counted by the exact engine, and redrawn and counted by the
Monte Carlo engine.
"""

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .assignment import (
    DEFAULT_ENUMERATION_LIMIT,
    GROUP_CODES,
    GroupSizes,
    assignment_count,
    iter_code_batches,
    worker_generator,
)
from .estimators import BatchEvaluator, SingularDesignError
from .population import Population, replicate
from .theory import (
    bias_k,
    nominal_asymptotics,
    plugin_spec,
    q_tilde,
    sigma_matrix,
)

_GROUP_LETTERS = np.array(["A", "B", "C"], dtype="U1")


class _KahanSum:
    """Compensated accumulator; error stays O(eps) per element regardless of count."""

    def __init__(self, shape=()):
        self._total = np.zeros(shape)
        self._comp = np.zeros(shape)

    def add(self, value):
        value = np.asarray(value, dtype=np.float64)
        t = self._total + value
        big = np.abs(self._total) >= np.abs(value)
        self._comp = self._comp + np.where(big, (self._total - t) + value, (value - t) + self._total)
        self._total = t

    @property
    def value(self) -> np.ndarray:
        return self._total + self._comp


def _process_in_order(jobs, compute, merge, threads: int) -> None:
    """Run ``compute`` over ``jobs`` and ``merge`` results in job order.

    The merge order never depends on ``threads``, which is what makes
    engine output reproducible across worker counts.
    """
    if threads <= 1:
        for job in jobs:
            merge(compute(job))
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        pending = {}
        next_merge = 0
        next_submit = 0
        for job in jobs:
            pending[next_submit] = pool.submit(compute, job)
            next_submit += 1
            while len(pending) > 2 * threads:
                merge(pending.pop(next_merge).result())
                next_merge += 1
        while next_merge < next_submit:
            merge(pending.pop(next_merge).result())
            next_merge += 1


def _sample_cov(outer_sum: np.ndarray, mean: np.ndarray, count: int) -> np.ndarray:
    return (outer_sum - count * np.outer(mean, mean)) / (count - 1)


@dataclass
class AssignmentTable:
    """Per-assignment estimates, in enumeration order."""

    labels: list
    itt: np.ndarray
    mr: np.ndarray
    q_hat: np.ndarray
    sigma_hat_sq: np.ndarray
    singular: np.ndarray


@dataclass
class ExactSummary:
    """Exact distribution of both estimators over enumerated assignments.

    Expectations and covariances are taken over the emitted non-singular
    assignments with equal weight; ``singular_count`` says how many were
    excluded.  Biases are against the population means.
    """

    assignment_count: int
    singular_count: int
    truth: np.ndarray
    itt_mean: np.ndarray
    itt_bias: np.ndarray
    itt_cov: np.ndarray
    mr_mean: np.ndarray
    mr_bias: np.ndarray
    mr_cov: np.ndarray
    mr_z_coef_mean: float
    table: AssignmentTable | None = None


def _open_dump(path, first_column):
    fh = open(path, "w", newline="", encoding="utf-8")
    writer = csv.writer(fh)
    writer.writerow(
        [first_column, "itt_a", "itt_b", "itt_c", "mr_a", "mr_b", "mr_c", "q_hat", "sigma_hat_sq"]
    )
    return fh, writer


def _dump_rows(writer, keys, res):
    for i, key in enumerate(keys):
        writer.writerow(
            [key]
            + [repr(float(v)) for v in res["itt"][i]]
            + [repr(float(v)) for v in res["mr"][i]]
            + [repr(float(res["q_hat"][i])), repr(float(res["sigma_hat_sq"][i]))]
        )


def exact_distribution(
    pop: Population,
    sizes: GroupSizes,
    mode: str = "all",
    limit: int = DEFAULT_ENUMERATION_LIMIT,
    threads: int = 1,
    keep_table: bool = False,
    dump_path=None,
) -> ExactSummary:
    """Evaluate both estimators on every enumerated assignment."""
    sizes.validate_for(pop.n)
    total = assignment_count(sizes, mode)  # raises for unknown mode
    evaluator = BatchEvaluator(pop, sizes)
    truth = evaluator.truth

    sums = {name: _KahanSum(3) for name in ("itt", "mr")}
    outers = {name: _KahanSum((3, 3)) for name in ("itt", "mr")}
    q_sum = _KahanSum()
    state = {"valid": 0, "singular": 0}
    table_parts = [] if keep_table else None
    dump = _open_dump(dump_path, "assignment") if dump_path else None

    def compute(codes):
        res = evaluator.evaluate_codes(codes)
        res["codes"] = codes
        return res

    def merge(res):
        valid = res["valid"]
        state["valid"] += int(valid.sum())
        state["singular"] += int((~valid).sum())
        d_itt = res["itt"][valid] - truth
        d_mr = res["mr"][valid] - truth
        sums["itt"].add(d_itt.sum(axis=0))
        sums["mr"].add(d_mr.sum(axis=0))
        outers["itt"].add(d_itt.T @ d_itt)
        outers["mr"].add(d_mr.T @ d_mr)
        q_sum.add(res["q_hat"][valid].sum())
        if dump is not None:
            _dump_rows(dump[1], ["".join(row) for row in _GROUP_LETTERS[res["codes"]]], res)
        if table_parts is not None:
            table_parts.append(res)

    try:
        _process_in_order(iter_code_batches(sizes, mode, limit), compute, merge, threads)
    finally:
        if dump is not None:
            dump[0].close()

    count = state["valid"]
    if count == 0:
        raise SingularDesignError("all assignments are singular")
    itt_bias = sums["itt"].value / count
    mr_bias = sums["mr"].value / count
    table = None
    if table_parts is not None:
        table = AssignmentTable(
            labels=["".join(row) for part in table_parts for row in _GROUP_LETTERS[part["codes"]]],
            itt=np.concatenate([p["itt"] for p in table_parts]),
            mr=np.concatenate([p["mr"] for p in table_parts]),
            q_hat=np.concatenate([p["q_hat"] for p in table_parts]),
            sigma_hat_sq=np.concatenate([p["sigma_hat_sq"] for p in table_parts]),
            singular=np.concatenate([~p["valid"] for p in table_parts]),
        )
    return ExactSummary(
        assignment_count=total,
        singular_count=state["singular"],
        truth=truth,
        itt_mean=truth + itt_bias,
        itt_bias=itt_bias,
        itt_cov=outers["itt"].value / count - np.outer(itt_bias, itt_bias),
        mr_mean=truth + mr_bias,
        mr_bias=mr_bias,
        mr_cov=outers["mr"].value / count - np.outer(mr_bias, mr_bias),
        mr_z_coef_mean=float(q_sum.value / count),
        table=table,
    )


def contrast_symmetry_deviation(summary: ExactSummary, pair=("A", "C")) -> float:
    """Worst asymmetry of an effect-difference distribution about truth.

    Requires a summary built with ``keep_table=True``.  When the
    adjusted estimate of the pair contrast is distributed symmetrically
    about the true difference, the sorted centered values cancel
    pairwise and this returns roundoff.
    """
    if summary.table is None:
        raise ValueError("summary was built without keep_table=True")
    s, t = (GROUP_CODES[g] for g in pair)
    keep = ~summary.table.singular
    values = summary.table.mr[keep, t] - summary.table.mr[keep, s]
    centered = np.sort(values - (summary.truth[t] - summary.truth[s]))
    return float(np.abs(centered + centered[::-1]).max())


@dataclass
class MCSummary:
    """Monte Carlo distribution summary; bit-reproducible per seed.

    ``zeta`` refers to the scaled lead term sqrt(n) * (group-mean
    deviation - q_tilde * covariate group mean), whose covariance the
    asymptotic theory predicts; skewness/kurtosis per component feed the
    normality checks.  Covariances are sample covariances across
    replicates; ``*_se`` are Monte Carlo standard errors of the means.
    """

    replicates: int
    seed: object
    n: int
    sizes: GroupSizes
    singular_redraws: int
    truth: np.ndarray
    q_tilde: float
    itt_mean: np.ndarray
    itt_bias: np.ndarray
    itt_cov: np.ndarray
    itt_se: np.ndarray
    mr_mean: np.ndarray
    mr_bias: np.ndarray
    mr_cov: np.ndarray
    mr_se: np.ndarray
    mean_q_hat: float
    mean_sigma_hat_sq: float
    mean_nominal_cov: np.ndarray
    zeta_mean: np.ndarray
    zeta_cov: np.ndarray
    zeta_skewness: np.ndarray
    zeta_kurtosis: np.ndarray
    max_abs_dev_az_a: float


def _batch_sizes(reps: int, n: int, batch_size: int | None) -> list:
    if batch_size is None:
        # fixed formula of (reps, n) only; never depends on thread count
        batch_size = max(128, min(4096, 2_000_000 // max(n, 1)))
    full, rest = divmod(reps, batch_size)
    return [batch_size] * full + ([rest] if rest else [])


def monte_carlo(
    pop: Population,
    sizes: GroupSizes,
    reps: int,
    seed,
    threads: int = 1,
    batch_size: int | None = None,
    dump_path=None,
) -> MCSummary:
    """Summarize both estimators over ``reps`` independent assignments."""
    if reps < 2:
        raise ValueError("reps must be at least 2")
    sizes.validate_for(pop.n)
    qt = q_tilde(pop, sizes)
    evaluator = BatchEvaluator(pop, sizes, q_tilde=qt)
    truth = evaluator.truth
    az_mean = float(evaluator.products[0].mean())
    n = pop.n
    want_nominal = n > 4

    sums = {name: _KahanSum(3) for name in ("itt", "mr", "z1", "z2", "z3", "z4")}
    outers = {name: _KahanSum((3, 3)) for name in ("itt", "mr", "zeta")}
    scalars = {name: _KahanSum() for name in ("q_hat", "sigma_hat_sq")}
    nominal_sum = _KahanSum((4, 4))
    state = {"redraws": 0, "max_dev": 0.0, "written": 0}
    dump = _open_dump(dump_path, "replicate") if dump_path else None

    base_row = np.arange(n, dtype=np.int64)

    def compute(job):
        index, size = job
        rng = worker_generator(seed, index)
        idx = np.tile(base_row, (size, 1))
        rng.permuted(idx, axis=1, out=idx)
        res = evaluator.evaluate_index(idx, want_nominal=want_nominal, want_zeta=True)
        redraws = 0
        while True:
            bad = np.flatnonzero(~res["valid"])
            if bad.size == 0:
                break
            redraws += int(bad.size)
            sub = np.tile(base_row, (bad.size, 1))
            rng.permuted(sub, axis=1, out=sub)
            idx[bad] = sub
            patch = evaluator.evaluate_index(idx[bad], want_nominal=want_nominal, want_zeta=True)
            for key, arr in patch.items():
                res[key][bad] = arr
        res["redraws"] = redraws
        return res

    def merge(res):
        state["redraws"] += res["redraws"]
        d_itt = res["itt"] - truth
        d_mr = res["mr"] - truth
        zeta = res["zeta"]
        sums["itt"].add(d_itt.sum(axis=0))
        sums["mr"].add(d_mr.sum(axis=0))
        outers["itt"].add(d_itt.T @ d_itt)
        outers["mr"].add(d_mr.T @ d_mr)
        sums["z1"].add(zeta.sum(axis=0))
        sums["z2"].add((zeta**2).sum(axis=0))
        sums["z3"].add((zeta**3).sum(axis=0))
        sums["z4"].add((zeta**4).sum(axis=0))
        outers["zeta"].add(zeta.T @ zeta)
        scalars["q_hat"].add(res["q_hat"].sum())
        scalars["sigma_hat_sq"].add(res["sigma_hat_sq"].sum() if want_nominal else np.nan)
        if want_nominal:
            nominal_sum.add(res["nominal_cov"].sum(axis=0))
        state["max_dev"] = max(state["max_dev"], float(np.abs(res["sum_az_a"] - az_mean).max()))
        if dump is not None:
            _dump_rows(dump[1], range(state["written"], state["written"] + len(res["q_hat"])), res)
            state["written"] += len(res["q_hat"])

    jobs = list(enumerate(_batch_sizes(reps, n, batch_size)))
    try:
        _process_in_order(jobs, compute, merge, threads)
    finally:
        if dump is not None:
            dump[0].close()

    itt_bias = sums["itt"].value / reps
    mr_bias = sums["mr"].value / reps
    itt_cov = _sample_cov(outers["itt"].value, itt_bias, reps)
    mr_cov = _sample_cov(outers["mr"].value, mr_bias, reps)
    # central moments of zeta from raw power sums
    m1 = sums["z1"].value / reps
    r2 = sums["z2"].value / reps
    r3 = sums["z3"].value / reps
    r4 = sums["z4"].value / reps
    m2 = r2 - m1**2
    m3 = r3 - 3.0 * m1 * r2 + 2.0 * m1**3
    m4 = r4 - 4.0 * m1 * r3 + 6.0 * m1**2 * r2 - 3.0 * m1**4
    return MCSummary(
        replicates=reps,
        seed=seed,
        n=n,
        sizes=sizes,
        singular_redraws=state["redraws"],
        truth=truth,
        q_tilde=qt,
        itt_mean=truth + itt_bias,
        itt_bias=itt_bias,
        itt_cov=itt_cov,
        itt_se=np.sqrt(np.diag(itt_cov) / reps),
        mr_mean=truth + mr_bias,
        mr_bias=mr_bias,
        mr_cov=mr_cov,
        mr_se=np.sqrt(np.diag(mr_cov) / reps),
        mean_q_hat=float(scalars["q_hat"].value / reps),
        mean_sigma_hat_sq=float(scalars["sigma_hat_sq"].value / reps),
        mean_nominal_cov=nominal_sum.value / reps,
        zeta_mean=m1,
        zeta_cov=_sample_cov(outers["zeta"].value, m1, reps),
        zeta_skewness=m3 / m2**1.5,
        zeta_kurtosis=m4 / m2**2,
        max_abs_dev_az_a=state["max_dev"],
    )


# ---------------------------------------------------------------------------
# Deterministic populations built from period-8 sign patterns.  Distinct
# rows are exactly orthogonal with mean 0 and unit mean square, so the
# moment structure below holds to machine precision at any multiple of 8.

_SIGN_PATTERNS = np.array(
    [
        [1, -1, 1, -1, 1, -1, 1, -1],
        [1, 1, -1, -1, 1, 1, -1, -1],
        [1, -1, -1, 1, 1, -1, -1, 1],
        [1, 1, 1, 1, -1, -1, -1, -1],
    ],
    dtype=np.float64,
)


def _tiled_patterns(n: int) -> list:
    if n < 8 or n % 8:
        raise ValueError(f"n must be a positive multiple of 8, got {n}")
    return [np.tile(row, n // 8) for row in _SIGN_PATTERNS]


def make_orthogonal_population(n: int, var_b: float = 1.0) -> Population:
    """Population with exactly orthonormal a, c, z and var(b) = var_b.

    All four variables have mean 0 and vanishing pairwise covariances;
    a, c and z have unit variance.  This realizes, at finite n, the
    identity limiting covariance structure (with the b variance free).
    """
    if var_b <= 0.0:
        raise ValueError("var_b must be positive")
    r1, r2, r3, r4 = _tiled_patterns(n)
    return Population(r1, math.sqrt(var_b) * r2, r3, r4)


def make_additive_population(
    n: int, z_correlation: float = 0.6, shifts: tuple = (0.0, 1.0, 2.0)
) -> Population:
    """Additive-effects population with cov(a, z) = z_correlation.

    Responses share one unit-variance shape plus constant shifts, so
    adjustment must help the precision of every contrast.
    """
    rho = float(z_correlation)
    if not -1.0 < rho < 1.0:
        raise ValueError("z_correlation must lie strictly between -1 and 1")
    r1, r2, _, _ = _tiled_patterns(n)
    shape = rho * r1 + math.sqrt(1.0 - rho * rho) * r2
    return Population(shape + shifts[0], shape + shifts[1], shape + shifts[2], r1)


def make_interaction_population(n: int, var_b: float = 5.0 / 6.0) -> Population:
    """Uncorrelated responses whose sum is the covariate.

    var(a) = var(c) = (1 - var_b) / 2 and z = a + b + c has unit
    variance; raising var_b transfers response variance into the arm
    whose group membership the covariate cannot help with, which is the
    canonical way to make adjustment hurt a balanced design.
    """
    if not 0.0 < var_b < 1.0:
        raise ValueError("var_b must lie strictly between 0 and 1")
    va = (1.0 - var_b) / 2.0
    r1, r2, r3, _ = _tiled_patterns(n)
    a = math.sqrt(va) * r1
    b = math.sqrt(var_b) * r2
    c = math.sqrt(va) * r3
    return Population(a, b, c, a + b + c)


# ---------------------------------------------------------------------------
# Order diagnostics: replicate a base population (moments frozen, n
# growing) and compare Monte Carlo summaries against the closed forms.


@dataclass
class OrderCheckRow:
    m: int
    n: int
    bias: np.ndarray
    bias_scaled: np.ndarray
    bias_target: np.ndarray
    bias_gate: np.ndarray
    bias_ok: bool
    residual_norm: float
    cov_deviation: float
    sigma_hat_mean: float
    max_dev_az: float


@dataclass
class OrderCheckReport:
    """Asymptotic-order diagnostics along a replication sequence.

    Per replication factor m (population size n = m * n0): the adjusted
    estimator's Monte Carlo bias scaled by (n - 1) against the negated
    bias coefficient K, with a four-standard-error gate; the deviation
    of n times the estimator covariance from its limit; the mean
    residual-variance estimate against its limit; the norm of the
    second-order bias residual; and the worst deviation of a sampled
    product mean from its population value (a concentration check).
    ``slope`` is the log-log fit of the bias residual against n; second-
    order theory predicts it to be steeply negative.
    """

    k: np.ndarray
    sigma: np.ndarray
    sigma_sq: float
    rows: list
    slope: float


def order_checks(
    base: Population,
    sizes: GroupSizes,
    m_values,
    reps: int,
    seed: int,
    threads: int = 1,
) -> OrderCheckReport:
    sizes.validate_for(base.n)
    k = bias_k(base, sizes)
    spec = plugin_spec(base, sizes)
    sigma, _ = sigma_matrix(spec)
    sigma_sq = nominal_asymptotics(spec).sigma_sq
    rows = []
    for i, m in enumerate(m_values):
        m = int(m)
        pop_m = replicate(base, m)
        mc = monte_carlo(
            pop_m,
            sizes.scaled(m),
            reps,
            seed=np.random.SeedSequence(seed, spawn_key=(i,)),
            threads=threads,
        )
        n = pop_m.n
        scaled = (n - 1) * mc.mr_bias
        gate = 4.0 * (n - 1) * mc.mr_se
        rows.append(
            OrderCheckRow(
                m=m,
                n=n,
                bias=mc.mr_bias,
                bias_scaled=scaled,
                bias_target=-k,
                bias_gate=gate,
                bias_ok=bool(np.all(np.abs(scaled + k) <= gate)),
                residual_norm=float(np.linalg.norm(mc.mr_bias + k / (n - 1))),
                cov_deviation=float(np.abs(n * mc.mr_cov - sigma).max()),
                sigma_hat_mean=mc.mean_sigma_hat_sq,
                max_dev_az=mc.max_abs_dev_az_a,
            )
        )
    if len(rows) >= 2 and all(r.residual_norm > 0 for r in rows):
        log_n = np.log([r.n for r in rows])
        log_r = np.log([r.residual_norm for r in rows])
        slope = float(np.polyfit(log_n, log_r, 1)[0])
    else:
        slope = float("nan")
    return OrderCheckReport(k=k, sigma=sigma, sigma_sq=sigma_sq, rows=rows, slope=slope)
