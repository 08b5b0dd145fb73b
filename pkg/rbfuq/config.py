import logging
import os
from typing import Any, Dict, Mapping, Optional

import lark
from lark import Lark, Transformer

from .collocation import SUPPORTED_LEVELS, QuadratureRule
from .errors import ConfigError
from .randomfield import DistributionSpec, KLFieldSpec, Marginal
from .rbf import KERNELS, kernel_from_spec
from .screening import ReductionPolicy

__all__ = ("PipelineConfig", "load_config", "parse_config", "DEFAULTS", "ENV_PREFIX")

log = logging.getLogger(__name__)

ENV_PREFIX = "RBFUQ_"

DEFAULTS: Dict[str, Any] = {
    "mesh.h": 0.1,
    "mesh.geometry": "lshape",
    "model.gamma": 1.0,
    "model.source": 1.0,
    "model.dirichlet_top": 1.0,
    "model.dirichlet_sigma": 0.0,
    "model.newton_tol": 1e-10,
    "model.max_iter": 50,
    "field.distribution": "uniform",
    "field1.mean": 30.0,
    "field1.variance": 100.0,
    "field1.corr_length": 1.0,
    "field1.terms": 6,
    "field2.mean": 5.0,
    "field2.variance": 2.25,
    "field2.corr_length": 0.5,
    "field2.terms": 7,
    "field3.mean": 100.0,
    "field3.variance": 900.0,
    "field3.corr_length": 1.5,
    "field3.terms": 5,
    "screening.policy": "topk",
    "screening.top_k": 6,
    "screening.fraction": 0.99,
    "screening.full_hessian": False,
    "screening.c": 1.0,
    "metamodel.kernel": "multiquadric",
    "metamodel.shape": None,
    "metamodel.detrend": 1,
    "metamodel.energy_fraction": 1.0 - 1e-10,
    "metamodel.abs_error": None,
    "evaluation.l_add": 2000,
    "evaluation.quantiles": [0.5, 0.68, 0.9],
    "evaluation.skip": 20,
    "evaluation.distribution": None,
    "baseline.enabled": True,
    "baseline.rule": "gauss",
    "baseline.level": 2,
    "baseline.reduced": True,
    "run.workers": 1,
    "run.output_dir": "out",
    "run.max_solves": 100000,
    "run.vtk": False,
}

# variances of the model problem when the variables are normal
NORMAL_VARIANCES = {"field1.variance": 9.0, "field2.variance": 0.25, "field3.variance": 100.0}

DISTRIBUTIONS = {"uniform": Marginal.UNIFORM, "normal": Marginal.NORMAL}


# ===== parser =====
# noinspection PyMethodMayBeStatic
class ConfigTransformer(Transformer):
    def start(self, lines):
        return [entry for entry in lines if entry is not None]

    def line(self, entry):
        return entry[0] if entry else None

    def entry(self, kv):
        key, value = kv
        return str(key).lower(), value

    def value(self, v):
        return v[0]

    def number(self, tok):
        text = str(tok[0])
        if any(c in text for c in ".eE"):
            return float(text)
        return int(text)

    def string(self, tok):
        (t,) = tok
        if t.type == "ESCAPED_STRING":
            return t[1:-1].replace('\\"', '"').replace("\\\\", "\\")
        lowered = str(t).lower()
        if lowered in ("true", "false"):
            return lowered == "true"
        return str(t)

    def list(self, items):
        return [i for i in items if i is not None]


with open(os.path.join(os.path.dirname(__file__), "grammar.lark")) as f:
    grammar = f.read()
parser = Lark(grammar, start=["start", "value"], parser="lalr", transformer=ConfigTransformer())


def _syntax_error(text: str, e: lark.UnexpectedInput) -> ConfigError:
    if isinstance(e, lark.UnexpectedToken):
        got, expected = e.token, sorted(e.expected)
    elif isinstance(e, lark.UnexpectedCharacters):
        got, expected = text[e.pos_in_stream], sorted(e.allowed)
    else:
        got, expected = "end of input", []
    line, col = getattr(e, "line", None), getattr(e, "column", None)
    return ConfigError(f"Unexpected {got!r}, expected one of {expected}", line, col)


def parse_config(text: str) -> Dict[str, Any]:
    """
    Parses config text into a ``{dotted.key: value}`` dict.

    >>> parse_config('mesh.h = 0.05  # finer\\nbaseline.enabled = false')
    {'mesh.h': 0.05, 'baseline.enabled': False}

    :raises ConfigError: on syntax errors or duplicate keys.
    """
    try:
        entries = parser.parse(text, start="start")
    except lark.UnexpectedInput as e:
        raise _syntax_error(text, e) from e
    values = {}
    for key, value in entries:
        if key in values:
            raise ConfigError(f"Duplicate key {key!r}.")
        values[key] = value
    return values


def parse_value(text: str):
    """Parses one value the way the right-hand side of a config line is parsed; unparseable text stays a string."""
    try:
        return parser.parse(text.strip(), start="value")
    except lark.UnexpectedInput:
        return text.strip()


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
    """``RBFUQ_SECTION__KEY=value`` environment variables as ``{section.key: value}``."""
    environ = os.environ if environ is None else environ
    out = {}
    for name, text in environ.items():
        if not name.upper().startswith(ENV_PREFIX) or "__" not in name:
            continue
        key = name[len(ENV_PREFIX) :].lower().replace("__", ".")
        out[key] = parse_value(text)
    return out


# ===== config =====
class PipelineConfig:
    """
    A resolved pipeline configuration: every key of :data:`DEFAULTS`, with file, environment and explicit overrides
    applied in that order. Validated on construction.
    """

    __slots__ = ("values", "explicit")

    def __init__(self, values: Optional[Mapping[str, Any]] = None):
        values = dict(values or {})
        unknown = sorted(set(values) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"Unknown config keys: {unknown}")
        self.explicit = frozenset(values)
        resolved = dict(DEFAULTS)
        if values.get("field.distribution", DEFAULTS["field.distribution"]) == "normal":
            resolved.update(NORMAL_VARIANCES)
        resolved.update(values)
        self.values = resolved
        self.validate()

    def __getitem__(self, key):
        return self.values[key]

    def replace(self, **overrides) -> "PipelineConfig":
        """A copy with some keys replaced; keys use ``__`` for the dot, e.g. ``run__workers=4``."""
        values = {k: self.values[k] for k in self.explicit}
        values.update({k.replace("__", "."): v for k, v in overrides.items()})
        return PipelineConfig(values)

    # ---- validation ----
    def _require(self, ok: bool, msg: str):
        if not ok:
            raise ConfigError(msg)

    def validate(self):
        """
        :raises ConfigError: if a value has the wrong type or the values are inconsistent.
        """
        for key, default in DEFAULTS.items():
            value = self.values[key]
            if value is None:
                continue
            if default is None:
                if key != "evaluation.distribution":
                    self._require(
                        isinstance(value, (int, float)) and not isinstance(value, bool), f"{key} must be a number."
                    )
                continue
            if isinstance(default, bool):
                self._require(isinstance(value, bool), f"{key} must be true or false.")
            elif isinstance(default, (int, float)):
                self._require(
                    isinstance(value, (int, float)) and not isinstance(value, bool), f"{key} must be a number."
                )
                if isinstance(default, int) and not isinstance(default, bool):
                    self._require(float(value).is_integer(), f"{key} must be an integer.")
                    self.values[key] = int(value)
            elif isinstance(default, str):
                self._require(isinstance(value, str), f"{key} must be a string.")
            elif isinstance(default, list):
                self._require(isinstance(value, list), f"{key} must be a list.")

        v = self.values
        self._require(0 < v["mesh.h"] <= 1, "mesh.h must lie in (0, 1].")
        self._require(v["mesh.geometry"] in ("lshape", "square"), "mesh.geometry must be lshape or square.")
        self._require(v["field.distribution"] in DISTRIBUTIONS, "field.distribution must be uniform or normal.")
        self._require(
            v["evaluation.distribution"] in (None, *DISTRIBUTIONS), "evaluation.distribution must be uniform or normal."
        )
        for i in (1, 2, 3):
            self._require(v[f"field{i}.variance"] > 0, f"field{i}.variance must be positive.")
            self._require(v[f"field{i}.corr_length"] > 0, f"field{i}.corr_length must be positive.")
            self._require(v[f"field{i}.terms"] >= 1, f"field{i}.terms must be at least 1.")
        self._require(v["model.dirichlet_sigma"] >= 0, "model.dirichlet_sigma must not be negative.")
        self._require(v["model.newton_tol"] > 0, "model.newton_tol must be positive.")
        self._require(v["screening.policy"] in ("topk", "threshold"), "screening.policy must be topk or threshold.")
        self._require(1 <= v["screening.top_k"] <= self.dim, f"screening.top_k must lie in [1, {self.dim}].")
        self._require(0 < v["screening.fraction"] <= 1, "screening.fraction must lie in (0, 1].")
        self._require(v["screening.c"] > 0, "screening.c must be positive.")
        self._require(v["metamodel.kernel"].lower() in KERNELS, f"metamodel.kernel must be one of {sorted(KERNELS)}.")
        self._require(v["metamodel.shape"] is None or v["metamodel.shape"] > 0, "metamodel.shape must be positive.")
        self._require(v["metamodel.detrend"] in (-1, 0, 1), "metamodel.detrend must be -1 (none), 0 or 1.")
        self._require(0 < v["metamodel.energy_fraction"] <= 1, "metamodel.energy_fraction must lie in (0, 1].")
        self._require(v["metamodel.abs_error"] is None or v["metamodel.abs_error"] >= 0, "abs_error must be >= 0.")
        self._require(v["evaluation.l_add"] >= 100, "evaluation.l_add must be at least 100.")
        self._require(
            len(v["evaluation.quantiles"]) > 0
            and all(isinstance(q, (int, float)) and 0 < q < 1 for q in v["evaluation.quantiles"]),
            "evaluation.quantiles must be a non-empty list of probabilities in (0, 1).",
        )
        self._require(v["evaluation.skip"] >= 1, "evaluation.skip must be at least 1.")
        self._require(v["baseline.rule"] in ("gauss", "cc", "clenshaw_curtis"), "baseline.rule must be gauss or cc.")
        self._require(v["baseline.level"] in SUPPORTED_LEVELS, f"baseline.level must be one of {SUPPORTED_LEVELS}.")
        self._require(v["run.workers"] >= 1, "run.workers must be at least 1.")
        self._require(v["run.max_solves"] >= 1, "run.max_solves must be at least 1.")
        self._require(
            sum(s.term_count for s in self.field_specs()) == self.field_dim,
            "Field term counts do not add up to the parameter count.",
        )

    # ---- derived views ----
    @property
    def marginal(self) -> Marginal:
        return DISTRIBUTIONS[self.values["field.distribution"]]

    @property
    def field_dim(self) -> int:
        return sum(self.values[f"field{i}.terms"] for i in (1, 2, 3))

    @property
    def random_dirichlet(self) -> bool:
        return self.values["model.dirichlet_sigma"] > 0

    @property
    def dim(self) -> int:
        """The number of random variables L, including the Dirichlet variable when it is random."""
        return self.field_dim + int(self.random_dirichlet)

    def field_specs(self):
        return tuple(
            KLFieldSpec(
                self.values[f"field{i}.mean"],
                self.values[f"field{i}.variance"],
                self.values[f"field{i}.corr_length"],
                self.values[f"field{i}.terms"],
                i,
            )
            for i in (1, 2, 3)
        )

    def distribution(self) -> DistributionSpec:
        return DistributionSpec([self.marginal] * self.dim)

    def evaluation_distribution(self) -> DistributionSpec:
        name = self.values["evaluation.distribution"] or self.values["field.distribution"]
        return DistributionSpec([DISTRIBUTIONS[name]] * self.dim)

    def reduction_policy(self) -> ReductionPolicy:
        if self.values["screening.policy"] == "topk":
            return ReductionPolicy(top_k=self.values["screening.top_k"])
        return ReductionPolicy(fraction=self.values["screening.fraction"])

    def kernel(self, default_shape: float):
        """The configured kernel; without ``metamodel.shape`` the data-driven ``default_shape`` is used."""
        shape = self.values["metamodel.shape"]
        return kernel_from_spec(self.values["metamodel.kernel"], shape if shape is not None else default_shape)

    @property
    def detrend(self) -> Optional[int]:
        degree = self.values["metamodel.detrend"]
        return None if degree < 0 else degree

    def svd_options(self) -> dict:
        if self.values["metamodel.abs_error"] is not None:
            return {"abs_error": self.values["metamodel.abs_error"]}
        return {"energy_fraction": self.values["metamodel.energy_fraction"]}

    def baseline_rule(self, dist: DistributionSpec) -> QuadratureRule:
        return QuadratureRule.from_name(self.values["baseline.rule"], dist)

    def as_dict(self) -> dict:
        return dict(self.values)

    def __repr__(self):
        return f"<PipelineConfig L={self.dim} explicit={sorted(self.explicit)}>"


def load_config(
    path=None, environ: Optional[Mapping[str, str]] = None, overrides: Optional[Mapping[str, Any]] = None
) -> PipelineConfig:
    """
    Loads a config file (or only defaults when ``path`` is None), then applies ``RBFUQ_`` environment overrides and
    explicit overrides.

    :raises ConfigError: if the file cannot be read or parsed, or the result is invalid.
    """
    values = {}
    if path is not None:
        try:
            with open(path) as f:
                values = parse_config(f.read())
        except OSError as e:
            raise ConfigError(f"Cannot read config file {path}: {e}") from e
    values.update(env_overrides(environ))
    values.update(overrides or {})
    config = PipelineConfig(values)
    log.debug("Resolved config: %s", config.values)
    return config
