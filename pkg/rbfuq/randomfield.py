import math
import warnings
from enum import IntEnum
from typing import Sequence, Tuple

import cachetools
import numpy as np
from scipy import optimize, special

from .errors import NonPositiveCoefficient, OutOfDomain, RootBracketingFailure
from .mesh import lshape_subdomain

__all__ = (
    "Marginal",
    "DistributionSpec",
    "KLFieldSpec",
    "KLEigenpairs1D",
    "KLBasis",
    "PiecewiseField",
    "kl_eigenpairs_1d",
    "build_kl_basis",
    "evaluate_coefficient",
    "model_problem_specs",
    "SQRT3",
)

SQRT3 = math.sqrt(3.0)

# subdomain bounding boxes (x0, x1, y0, y1) of the L-shape partition
SUBDOMAIN_BOXES = {1: (0.0, 1.0, 0.0, 2.0), 2: (1.0, 2.0, 0.0, 0.5), 3: (1.0, 2.0, 0.5, 1.0)}


class Marginal(IntEnum):
    """
    The marginal distribution of one random variable, always with mean 0 and variance 1.
    """

    UNIFORM = 0  # uniform on [-sqrt(3), sqrt(3)]
    NORMAL = 1  # standard normal


class DistributionSpec:
    """
    Independent unit-variance marginals of the ``L`` random variables, and the map between the normalized design
    space and the physical variables.

    A normalized coordinate of +-1 is the uniform endpoint +-sqrt(3), or one standard deviation for a normal variable.
    """

    __slots__ = ("kinds",)

    def __init__(self, kinds: Sequence[Marginal]):
        self.kinds = tuple(Marginal(k) for k in kinds)

    @classmethod
    def uniform(cls, dim: int) -> "DistributionSpec":
        return cls([Marginal.UNIFORM] * dim)

    @classmethod
    def normal(cls, dim: int) -> "DistributionSpec":
        return cls([Marginal.NORMAL] * dim)

    @property
    def dim(self) -> int:
        return len(self.kinds)

    @property
    def scales(self) -> np.ndarray:
        """Physical value of the normalized coordinate +1, per variable."""
        return np.array([SQRT3 if k == Marginal.UNIFORM else 1.0 for k in self.kinds])

    def subset(self, indices: Sequence[int]) -> "DistributionSpec":
        return DistributionSpec([self.kinds[i] for i in indices])

    def to_physical(self, normalized) -> np.ndarray:
        return np.asarray(normalized, dtype=float) * self.scales

    def to_normalized(self, physical) -> np.ndarray:
        return np.asarray(physical, dtype=float) / self.scales

    def ppf(self, unit) -> np.ndarray:
        """
        Maps points of the unit cube through each marginal's inverse CDF.

        :param unit: (n, L) values in (0, 1).
        :returns: (n, L) physical samples.
        """
        unit = np.asarray(unit, dtype=float)
        out = np.empty_like(unit)
        for j, kind in enumerate(self.kinds):
            if kind == Marginal.UNIFORM:
                out[:, j] = SQRT3 * (2.0 * unit[:, j] - 1.0)
            else:
                out[:, j] = special.ndtri(unit[:, j])
        return out

    def __eq__(self, other):
        return isinstance(other, DistributionSpec) and self.kinds == other.kinds

    def __hash__(self):
        return hash(self.kinds)

    def __repr__(self):
        return f"<DistributionSpec {[k.name for k in self.kinds]}>"


class KLFieldSpec:
    """A truncated Karhunen-Loeve description of one piece of the piecewise random coefficient."""

    __slots__ = ("mean", "variance", "corr_length", "term_count", "subdomain", "domain_box")

    def __init__(self, mean, variance, corr_length, term_count, subdomain, domain_box=None):
        """
        :param float mean: The mean value of the field.
        :param float variance: The field variance sigma^2.
        :param float corr_length: The correlation length l_c.
        :param int term_count: The number of KL terms (random variables) of this field.
        :param int subdomain: The subdomain label the field lives on.
        :param domain_box: ``(x0, x1, y0, y1)``; defaults to the bounding box of the subdomain.
        """
        if variance <= 0 or corr_length <= 0 or term_count < 1:
            raise ValueError("KL field spec needs variance > 0, corr_length > 0 and term_count >= 1.")
        self.mean = float(mean)
        self.variance = float(variance)
        self.corr_length = float(corr_length)
        self.term_count = int(term_count)
        self.subdomain = int(subdomain)
        self.domain_box = tuple(float(v) for v in (domain_box or SUBDOMAIN_BOXES[self.subdomain]))

    def _key(self):
        return self.mean, self.variance, self.corr_length, self.term_count, self.subdomain, self.domain_box

    def __eq__(self, other):
        return isinstance(other, KLFieldSpec) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def __repr__(self):
        return (
            f"<KLFieldSpec mean={self.mean} variance={self.variance} corr_length={self.corr_length} "
            f"terms={self.term_count} subdomain={self.subdomain}>"
        )


def model_problem_specs(kind: Marginal = Marginal.UNIFORM, terms=(6, 7, 5)) -> Tuple[KLFieldSpec, ...]:
    """
    The three field specs of the L-shaped model problem: means 30, 5, 100; correlation lengths 1, 0.5, 1.5; variances
    100, 2.25, 900 for uniform variables and 9, 0.25, 100 for normal variables.
    """
    variances = (100.0, 2.25, 900.0) if kind == Marginal.UNIFORM else (9.0, 0.25, 100.0)
    means = (30.0, 5.0, 100.0)
    lengths = (1.0, 0.5, 1.5)
    return tuple(KLFieldSpec(means[i], variances[i], lengths[i], terms[i], i + 1) for i in range(3))


# ===== 1D eigenpairs =====
class KLEigenpairs1D:
    """Eigenpairs of the 1D exponential kernel on ``[0, a]``, ordered by descending eigenvalue."""

    __slots__ = ("roots", "eigenvalues", "even", "interval_length", "_norms")

    def __init__(self, roots, eigenvalues, even, interval_length):
        self.roots = np.asarray(roots, dtype=float)
        self.eigenvalues = np.asarray(eigenvalues, dtype=float)
        self.even = np.asarray(even, dtype=bool)
        self.interval_length = float(interval_length)
        half = self.interval_length / 2.0
        sinc = np.sin(2.0 * self.roots * half) / (2.0 * self.roots)
        self._norms = np.sqrt(np.where(self.even, half + sinc, half - sinc))

    def __len__(self):
        return len(self.roots)

    def evaluate(self, x) -> np.ndarray:
        """
        Evaluates the normalized eigenfunctions.

        :param x: Points in ``[0, a]``, shape (P,).
        :returns: (P, n) eigenfunction values.
        """
        s = np.asarray(x, dtype=float)[:, None] - self.interval_length / 2.0
        arg = s * self.roots[None, :]
        return np.where(self.even, np.cos(arg), np.sin(arg)) / self._norms


def kl_eigenpairs_1d(variance: float, corr_length: float, interval_length: float, n: int) -> KLEigenpairs1D:
    """
    Computes the ``n`` leading eigenpairs of ``C(x, x') = variance * exp(-|x - x'| / corr_length)`` on
    ``[0, interval_length]``.

    The n-th root ``w`` of the characteristic equation lies in ``((n-1) pi / a, n pi / a)``; odd n give cosine-type
    eigenfunctions, even n give sine-type eigenfunctions. The eigenvalue is
    ``2 l_c sigma^2 / (l_c^2 w^2 + 1)``.

    :param float variance: The variance sigma^2.
    :param float corr_length: The correlation length l_c.
    :param float interval_length: The interval length a.
    :param int n: The number of eigenpairs.
    :rtype: KLEigenpairs1D
    :raises RootBracketingFailure: if a root cannot be isolated in its interval.
    """
    if variance <= 0 or corr_length <= 0 or interval_length <= 0 or n < 1:
        raise ValueError("All inputs to kl_eigenpairs_1d must be positive.")
    c = 1.0 / corr_length
    half = interval_length / 2.0

    def f_even(w):
        return c * math.cos(w * half) - w * math.sin(w * half)

    def f_odd(w):
        return w * math.cos(w * half) + c * math.sin(w * half)

    roots, even = [], []
    for k in range(1, n + 1):
        lo, hi = (k - 1) * math.pi / interval_length, k * math.pi / interval_length
        func = f_even if k % 2 else f_odd
        try:
            roots.append(optimize.bisect(func, lo, hi, xtol=1e-13, maxiter=200))
        except (ValueError, RuntimeError) as e:
            raise RootBracketingFailure(f"Could not isolate root {k} in ({lo}, {hi}): {e}")
        even.append(bool(k % 2))
    roots = np.array(roots)
    eigenvalues = 2.0 * corr_length * variance / (corr_length**2 * roots**2 + 1.0)
    return KLEigenpairs1D(roots, eigenvalues, even, interval_length)


# ===== 2D tensor basis =====
class KLBasis:
    """
    A 2D KL basis of tensor-product eigenfunctions over an axis-aligned box, sorted by descending eigenvalue.
    Immutable after construction.
    """

    __slots__ = ("eigenvalues", "modes", "pairs_x", "pairs_y", "box")

    def __init__(self, eigenvalues, modes, pairs_x: KLEigenpairs1D, pairs_y: KLEigenpairs1D, box):
        self.eigenvalues = np.asarray(eigenvalues, dtype=float)
        self.modes = np.asarray(modes, dtype=np.int64)
        self.pairs_x = pairs_x
        self.pairs_y = pairs_y
        self.box = box
        self.eigenvalues.flags.writeable = False
        self.modes.flags.writeable = False

    def __len__(self):
        return len(self.eigenvalues)

    def evaluate(self, points) -> np.ndarray:
        """
        :param points: (P, 2) spatial points.
        :returns: (P, n) eigenfunction values.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        x0, _, y0, _ = self.box
        fx = self.pairs_x.evaluate(points[:, 0] - x0)
        fy = self.pairs_y.evaluate(points[:, 1] - y0)
        return fx[:, self.modes[:, 0]] * fy[:, self.modes[:, 1]]

    def rows(self):
        """Rows ``(term, eigenvalue, mode_x, mode_y, root_x, root_y)`` for a CSV dump; modes are 1-based."""
        for n, (lam, (i, j)) in enumerate(zip(self.eigenvalues, self.modes), start=1):
            yield n, lam, i + 1, j + 1, self.pairs_x.roots[i], self.pairs_y.roots[j]

    def __repr__(self):
        return f"<KLBasis terms={len(self)} box={self.box}>"


@cachetools.cached(cachetools.LRUCache(maxsize=64))
def build_kl_basis(spec: KLFieldSpec) -> KLBasis:
    """
    Builds the 2D basis of a field spec from 1D eigenpairs. The exponential kernel with L1 distance is separable,
    so 2D eigenvalues are ``variance * lambda_x * lambda_y`` (1D factors of unit variance). The ``term_count`` largest
    products are kept, sorted descending, ties broken by ``(mode_x, mode_y)``.

    :param KLFieldSpec spec: The field spec.
    :rtype: KLBasis
    :raises RootBracketingFailure: if a 1D root cannot be isolated.
    """
    x0, x1, y0, y1 = spec.domain_box
    n = spec.term_count
    pairs_x = kl_eigenpairs_1d(1.0, spec.corr_length, x1 - x0, n)
    pairs_y = kl_eigenpairs_1d(1.0, spec.corr_length, y1 - y0, n)
    products = [
        (spec.variance * pairs_x.eigenvalues[i] * pairs_y.eigenvalues[j], i, j) for i in range(n) for j in range(n)
    ]
    products.sort(key=lambda t: (-t[0], t[1], t[2]))
    chosen = products[:n]
    return KLBasis([t[0] for t in chosen], [(t[1], t[2]) for t in chosen], pairs_x, pairs_y, spec.domain_box)


# ===== piecewise coefficient =====
class PiecewiseField:
    """
    The piecewise random coefficient ``a_i(x, y) = mean_i + sum_n sqrt(lambda_n) phi_n(x) y_{i,n}`` on subdomain ``i``.
    The parameter vector ``y`` holds the variables of field 1, then field 2, then field 3.
    """

    __slots__ = ("specs", "bases", "offsets")

    def __init__(self, specs: Sequence[KLFieldSpec]):
        self.specs = tuple(specs)
        self.bases = tuple(build_kl_basis(s) for s in self.specs)
        self.offsets = np.concatenate([[0], np.cumsum([s.term_count for s in self.specs])])

    @property
    def dim(self) -> int:
        return int(self.offsets[-1])

    def _check(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float).reshape(-1)
        if len(y) != self.dim:
            raise ValueError(f"Parameter vector has {len(y)} entries, expected {self.dim}.")
        return y

    def values(self, points, subdomains, y) -> np.ndarray:
        """
        Evaluates ``a(x, 0, y)`` at points with known subdomain labels.

        :param points: (P, 2) spatial points.
        :param subdomains: (P,) subdomain labels.
        :param y: (L,) physical parameter values.
        :returns: (P,) coefficient values.
        """
        y = self._check(y)
        points = np.atleast_2d(np.asarray(points, dtype=float))
        subdomains = np.asarray(subdomains).reshape(-1)
        out = np.zeros(len(points))
        for i, (spec, basis) in enumerate(zip(self.specs, self.bases)):
            mask = subdomains == spec.subdomain
            if not np.any(mask):
                continue
            yi = y[self.offsets[i] : self.offsets[i + 1]]
            out[mask] = spec.mean + basis.evaluate(points[mask]) @ (np.sqrt(basis.eigenvalues) * yi)
        if np.any(out <= 0):
            warnings.warn(f"Coefficient value {out.min():.3e} is not positive.", NonPositiveCoefficient)
        return out

    def bind(self, y):
        """
        Returns the coefficient for fixed ``y`` as a callable ``(points, subdomains) -> values``, the form expected by
        :func:`rbfuq.fem.solve_deterministic`.
        """
        y = self._check(y).copy()
        return lambda points, subdomains: self.values(points, subdomains, y)

    def pointwise_variance(self, points, subdomains) -> np.ndarray:
        """``sum_n lambda_n phi_n(x)^2``, the variance of the coefficient at each point for unit-variance variables."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        subdomains = np.asarray(subdomains).reshape(-1)
        out = np.zeros(len(points))
        for spec, basis in zip(self.specs, self.bases):
            mask = subdomains == spec.subdomain
            if np.any(mask):
                out[mask] = (basis.evaluate(points[mask]) ** 2) @ basis.eigenvalues
        return out


def _inside_lshape(x: float, y: float) -> bool:
    if not (0.0 <= x <= 2.0 and 0.0 <= y <= 2.0):
        return False
    return not (x > 1.0 and y > 1.0)


def evaluate_coefficient(x, u: float, y, specs: Sequence[KLFieldSpec], gamma: float) -> float:
    """
    Evaluates the nonlinear coefficient ``a_i(x, y) + gamma * u^2`` at one point of the L-shape.

    >>> specs = model_problem_specs()
    >>> evaluate_coefficient((0.5, 0.5), 0.0, [0.0] * 18, specs, 1.0)
    30.0

    :param x: The spatial point ``(x, y)``.
    :param float u: The state value at ``x``.
    :param y: The physical parameter vector, field 1 variables first.
    :param specs: The three field specs.
    :param float gamma: The nonlinearity constant.
    :rtype: float
    :raises OutOfDomain: if the point lies outside the L-shape.
    """
    px, py = float(x[0]), float(x[1])
    if not _inside_lshape(px, py):
        raise OutOfDomain(f"Point ({px}, {py}) lies outside the L-shaped domain.")
    field = PiecewiseField(specs)
    base = field.values([[px, py]], [lshape_subdomain((px, py))], y)[0]
    value = float(base + gamma * u * u)
    if value <= 0:
        warnings.warn(f"Coefficient value {value:.3e} is not positive.", NonPositiveCoefficient)
    return value
