import json
import logging
import os
from typing import Optional

import numpy as np

from .errors import ShapeMismatch
from .randomfield import DistributionSpec, Marginal
from .rbf import RbfModel, fit_rbf, kernel_from_spec
from .sampling import CSV_FORMAT, DesignMatrix
from .screening import Reduction
from .svd import TruncatedSvd, fast_svd

__all__ = ("accelerated_evaluate", "Metamodel", "build_metamodel", "BUNDLE_MANIFEST")

log = logging.getLogger(__name__)

BUNDLE_MANIFEST = "metamodel.json"


def accelerated_evaluate(svd: TruncatedSvd, model: RbfModel, query) -> np.ndarray:
    """
    Evaluates the accelerated metamodel ``F (Lambda (Vt w(z)))``.

    At full rank this equals ``sum_i u_i w_i(z)``; the cost per query is ``O(Nk + Mk)``.

    :param TruncatedSvd svd: Factorization of the snapshots the model was fitted on.
    :param RbfModel model: The fitted RBF model.
    :param query: One (L,) point, giving an (M,) field, or (n, L) points, giving (n, M) fields.
    :raises ShapeMismatch: if the factorization and the model disagree on N, or the query on L.
    """
    if svd.N != model.N:
        raise ShapeMismatch(f"The factorization has {svd.N} columns but the model has {model.N} centers.")
    w = model.weights(query)
    coefficients = (w @ svd.Vt.T) * svd.singular_values
    return coefficients @ svd.F.T


class Metamodel:
    """
    A fitted RBF model and the truncated SVD of its snapshots, plus the reduction that maps full parameter vectors
    to the model's inputs and the distribution whose normalized coordinates the model was built in. This is
    everything needed to evaluate new statistical scenarios without new solves.
    """

    __slots__ = ("model", "svd", "reduction", "dist")

    def __init__(
        self,
        model: RbfModel,
        svd: TruncatedSvd,
        reduction: Optional[Reduction] = None,
        dist: Optional[DistributionSpec] = None,
    ):
        if svd.N != model.N:
            raise ShapeMismatch("The factorization and the model disagree on the number of centers.")
        self.model = model
        self.svd = svd
        self.reduction = reduction if reduction is not None else Reduction.identity(model.dim)
        if self.reduction.reduced_dim != model.dim:
            raise ShapeMismatch("The reduction does not match the model dimension.")
        self.dist = dist if dist is not None else DistributionSpec.uniform(self.reduction.dim)
        if self.dist.dim != self.reduction.dim:
            raise ShapeMismatch("The distribution does not match the full parameter dimension.")

    @property
    def full_dim(self) -> int:
        return self.reduction.dim

    def __call__(self, full_points) -> np.ndarray:
        """Evaluates at normalized points of the full parameter space; non-retained coordinates are ignored."""
        full_points = np.asarray(full_points, dtype=float)
        single = full_points.ndim == 1
        out = accelerated_evaluate(self.svd, self.model, self.reduction.project(full_points))
        return out[0] if single else out

    def evaluate_physical(self, samples) -> np.ndarray:
        """Evaluates at physical parameter values, e.g. samples drawn under another distribution."""
        return self(self.dist.to_normalized(samples))

    # ==== persistence ====
    def save(self, directory):
        """
        Writes a plain-text bundle: a JSON manifest plus ``centers.csv``, ``F.csv``, ``singular_values.csv`` and
        ``Vt.csv``. The interpolation system is refactorized on load.
        """
        os.makedirs(directory, exist_ok=True)
        manifest = {
            "kernel": self.model.kernel.spec(),
            "detrend": self.model.detrend,
            "retained": self.reduction.retained.tolist(),
            "full_dim": self.reduction.dim,
            "marginals": [k.name.lower() for k in self.dist.kinds],
            "discarded_energy": self.svd.discarded_energy,
        }
        with open(os.path.join(directory, BUNDLE_MANIFEST), "w") as f:
            json.dump(manifest, f, indent=2)
        np.savetxt(os.path.join(directory, "centers.csv"), self.model.centers, delimiter=",", fmt=CSV_FORMAT)
        np.savetxt(os.path.join(directory, "F.csv"), self.svd.F, delimiter=",", fmt=CSV_FORMAT)
        np.savetxt(os.path.join(directory, "singular_values.csv"), self.svd.spectrum, delimiter=",", fmt=CSV_FORMAT)
        np.savetxt(os.path.join(directory, "Vt.csv"), self.svd.Vt, delimiter=",", fmt=CSV_FORMAT)
        log.info("Saved metamodel bundle to %s", directory)

    @classmethod
    def load(cls, directory) -> "Metamodel":
        with open(os.path.join(directory, BUNDLE_MANIFEST)) as f:
            manifest = json.load(f)
        centers = np.loadtxt(os.path.join(directory, "centers.csv"), delimiter=",", ndmin=2)
        spectrum = np.atleast_1d(np.loadtxt(os.path.join(directory, "singular_values.csv"), delimiter=","))
        Vt = np.loadtxt(os.path.join(directory, "Vt.csv"), delimiter=",", ndmin=2)
        k = Vt.shape[0]
        F = np.loadtxt(os.path.join(directory, "F.csv"), delimiter=",", ndmin=2).reshape(-1, k)
        model = fit_rbf(centers, kernel_from_spec(manifest["kernel"]), manifest["detrend"])
        svd = TruncatedSvd(F, spectrum[:k], Vt, manifest["discarded_energy"], spectrum)
        dist = DistributionSpec([Marginal[name.upper()] for name in manifest["marginals"]])
        return cls(model, svd, Reduction(manifest["retained"], manifest["full_dim"]), dist)

    def __repr__(self):
        return f"<Metamodel {self.model!r} {self.svd!r} {self.reduction!r}>"


def build_metamodel(
    design: DesignMatrix,
    reduction: Optional[Reduction] = None,
    kernel=None,
    detrend: Optional[int] = 1,
    dist: Optional[DistributionSpec] = None,
    **svd_options,
) -> Metamodel:
    """
    Fits an RBF model on a design's points and factorizes its snapshots.

    :param DesignMatrix design: Snapshots at normalized points of the (reduced) parameter space.
    :param reduction: The map from the full parameter space; identity if omitted.
    :param kernel: The RBF kernel; see :func:`~rbfuq.rbf.fit_rbf`.
    :param detrend: Detrending degree.
    :param dist: The distribution of the full parameter space; all uniform if omitted.
    :param svd_options: ``energy_fraction``, ``abs_error`` or ``rank`` for :func:`~rbfuq.svd.fast_svd`.
    :rtype: Metamodel
    """
    model = fit_rbf(design.points, kernel, detrend)
    svd = fast_svd(design, **svd_options)
    return Metamodel(model, svd, reduction, dist)
