"""Finite populations of potential responses and their moments.

A population fixes, for every subject, the response it would show under
each of the three treatments (``a``, ``b``, ``c``) together with a
pre-treatment covariate ``z``.  All randomness downstream comes from the
assignment of subjects to groups, never from the population itself.

Every moment in this module uses the divisor ``n`` (not ``n - 1``): the
closed-form sampling formulas in :mod:`triarm.theory` are exact only
under that convention.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

VARIABLES = ("a", "b", "c", "z")

#: Absolute tolerance for "covariate is centered / unit-scale" checks.
#: Populations are exact user data; this absorbs float roundoff only.
NORMALIZATION_TOL = 1e-9


class PopulationFormatError(ValueError):
    """A population CSV could not be parsed.

    Carries the offending data row (1-based, header excluded) and column
    name when they are known.
    """

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


def _as_readonly_vector(values, name):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if arr.size < 1:
        raise ValueError(f"{name} must contain at least one entry")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Population:
    """Potential responses ``a``, ``b``, ``c`` and covariate ``z``.

    All four sequences have the same length and finite entries.  Arrays
    are stored read-only, so instances are safe to share across threads.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        for name in VARIABLES:
            object.__setattr__(self, name, _as_readonly_vector(getattr(self, name), name))
        lengths = {getattr(self, name).size for name in VARIABLES}
        if len(lengths) != 1:
            raise ValueError("a, b, c, z must all have the same length")

    @property
    def n(self) -> int:
        return self.a.size

    def variable(self, name: str) -> np.ndarray:
        if name not in VARIABLES:
            raise ValueError(f"unknown variable {name!r}; expected one of {VARIABLES}")
        return getattr(self, name)

    def responses(self) -> np.ndarray:
        """The three response vectors stacked as a (3, n) array."""
        return np.stack([self.a, self.b, self.c])


@dataclass(frozen=True)
class MomentSet:
    """Divisor-``n`` moments of a population.

    ``means`` and ``fourth_abs_moments`` are ordered like
    :data:`VARIABLES`; ``covariance`` is the 4x4 matrix over the same
    ordering; ``product_covariances`` holds cov(az, z), cov(bz, z),
    cov(cz, z) where az etc. are the elementwise products.
    """

    means: np.ndarray
    covariance: np.ndarray
    product_covariances: np.ndarray
    fourth_abs_moments: np.ndarray

    def mean(self, x: str) -> float:
        return float(self.means[VARIABLES.index(x)])

    def var(self, x: str) -> float:
        i = VARIABLES.index(x)
        return float(self.covariance[i, i])

    def cov(self, x: str, y: str) -> float:
        return float(self.covariance[VARIABLES.index(x), VARIABLES.index(y)])


def _fsum_mean(values: np.ndarray) -> float:
    return math.fsum(values) / values.size


def _fsum_cov(x: np.ndarray, mx: float, y: np.ndarray, my: float) -> float:
    return math.fsum((x - mx) * (y - my)) / x.size


def moment_set(pop: Population) -> MomentSet:
    """All first, second and fourth-absolute moments of a population.

    Sums are exact (``math.fsum``), so the results are correctly rounded
    regardless of population size.
    """
    columns = [pop.variable(name) for name in VARIABLES]
    means = np.array([_fsum_mean(x) for x in columns])
    cov = np.empty((4, 4))
    for i in range(4):
        for j in range(i, 4):
            cov[i, j] = cov[j, i] = _fsum_cov(columns[i], means[i], columns[j], means[j])
    mz = means[VARIABLES.index("z")]
    prod_cov = np.empty(3)
    for k, x in enumerate((pop.a, pop.b, pop.c)):
        xz = x * pop.z
        prod_cov[k] = _fsum_cov(xz, _fsum_mean(xz), pop.z, mz)
    fourth = np.array([_fsum_mean(np.abs(x) ** 4) for x in columns])
    for arr in (means, cov, prod_cov, fourth):
        arr.setflags(write=False)
    return MomentSet(means, cov, prod_cov, fourth)


@dataclass(frozen=True)
class ZNormalization:
    """Affine map applied to the covariate: z -> (z - shift) / scale."""

    shift: float
    scale: float

    @property
    def is_identity(self) -> bool:
        return self.shift == 0.0 and self.scale == 1.0


def normalize_z(pop: Population) -> tuple[Population, ZNormalization]:
    """Center ``z`` and rescale it to unit mean square.

    The applied shift and scale are returned rather than silently
    discarded: translating the covariate changes individual effect
    estimates (only differences are invariant), so callers must be able
    to see what was done.
    """
    shift = _fsum_mean(pop.z)
    centered = pop.z - shift
    scale = math.sqrt(math.fsum(centered * centered) / pop.n)
    rms_raw = math.sqrt(_fsum_mean(pop.z * pop.z))
    if scale <= 1e-12 * max(rms_raw, 1.0):
        raise ValueError("zero variance covariate")
    return Population(pop.a, pop.b, pop.c, centered / scale), ZNormalization(shift, scale)


def is_normalized_z(pop: Population, tol: float = NORMALIZATION_TOL) -> bool:
    return (
        abs(_fsum_mean(pop.z)) <= tol
        and abs(_fsum_mean(pop.z * pop.z) - 1.0) <= tol
    )


def center_responses(pop: Population) -> tuple[Population, tuple[float, float, float]]:
    """Remove the response means, returning them alongside the population.

    ``z`` is left untouched.
    """
    means = tuple(_fsum_mean(x) for x in (pop.a, pop.b, pop.c))
    return (
        Population(pop.a - means[0], pop.b - means[1], pop.c - means[2], pop.z),
        means,
    )


def replicate(pop: Population, m: int) -> Population:
    """Duplicate every subject ``m`` times.

    Replication grows ``n`` while holding all divisor-``n`` moments
    fixed, which is how asymptotic claims are probed here.
    """
    if int(m) != m or m < 1:
        raise ValueError("replication factor must be a positive integer")
    m = int(m)
    if m == 1:
        return pop
    return Population(*(np.tile(pop.variable(v), m) for v in VARIABLES))


def additive_effects(pop: Population, tol: float = 1e-12) -> bool:
    """True when b - a and c - a are constant across subjects."""
    d1 = pop.b - pop.a
    d2 = pop.c - pop.a
    return float(np.ptp(d1)) <= tol and float(np.ptp(d2)) <= tol


@dataclass(frozen=True)
class ConditionReport:
    """Advisory regularity diagnostics; nothing here hard-fails.

    ``fourth_moment_bound`` is the max over variables of the average
    fourth absolute moment (the a-priori bound that the asymptotics
    assume).  The covariate flags use :data:`NORMALIZATION_TOL`.
    Convergence of moments along a sequence of populations cannot be
    checked on a single finite population; see
    :func:`triarm.experiments.order_checks` for the sequence-level
    diagnostics.
    """

    mean_z: float
    mean_sq_z: float
    fourth_moment_bound: float
    fractions_ok: bool
    z_centered_ok: bool
    z_scaled_ok: bool


def condition_report(pop: Population, sizes) -> ConditionReport:
    sizes.validate_for(pop.n)
    ms = moment_set(pop)
    mean_z = ms.mean("z")
    mean_sq_z = ms.var("z") + mean_z * mean_z
    return ConditionReport(
        mean_z=mean_z,
        mean_sq_z=mean_sq_z,
        fourth_moment_bound=float(ms.fourth_abs_moments.max()),
        fractions_ok=bool(np.all(sizes.counts() > 0)),
        z_centered_ok=abs(mean_z) <= NORMALIZATION_TOL,
        z_scaled_ok=abs(mean_sq_z - 1.0) <= NORMALIZATION_TOL,
    )


def load_population(path) -> Population:
    """Read a population from CSV.

    The header must name exactly the columns ``a,b,c,z`` (any order);
    every body cell must parse as a finite decimal number.  Rows are
    kept in file order.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PopulationFormatError("empty file: missing header row") from None
        names = [cell.strip() for cell in header]
        for name in names:
            if name not in VARIABLES:
                raise PopulationFormatError(f"unexpected column {name!r}", column=name)
            if names.count(name) > 1:
                raise PopulationFormatError(f"duplicate column {name!r}", column=name)
        for required in VARIABLES:
            if required not in names:
                raise PopulationFormatError(f"missing column {required!r}", column=required)

        columns = {name: [] for name in VARIABLES}
        row_index = 0
        for row in reader:
            if not row or all(not cell.strip() for cell in row):
                continue
            row_index += 1
            if len(row) != len(names):
                raise PopulationFormatError(
                    f"row {row_index}: expected {len(names)} cells, found {len(row)}",
                    row=row_index,
                )
            for name, cell in zip(names, row):
                text = cell.strip()
                try:
                    value = float(text)
                except ValueError:
                    raise PopulationFormatError(
                        f"row {row_index}, column {name!r}: not a number: {text!r}",
                        row=row_index,
                        column=name,
                    ) from None
                if not math.isfinite(value):
                    raise PopulationFormatError(
                        f"row {row_index}, column {name!r}: non-finite value {text!r}",
                        row=row_index,
                        column=name,
                    )
                columns[name].append(value)
        if row_index == 0:
            raise PopulationFormatError("empty body")
    return Population(*(columns[name] for name in VARIABLES))
