import pytest

from rbfuq import *
from rbfuq.config import DEFAULTS, env_overrides, load_config, parse_config, parse_value


def test_parse_basic():
    text = """
# model problem
mesh.h = 0.05
model.gamma = 100   # strongly nonlinear
field.distribution = normal
metamodel.kernel = "gaussian"
evaluation.quantiles = [0.5, 0.9]
baseline.enabled = false
"""
    assert parse_config(text) == {
        "mesh.h": 0.05,
        "model.gamma": 100,
        "field.distribution": "normal",
        "metamodel.kernel": "gaussian",
        "evaluation.quantiles": [0.5, 0.9],
        "baseline.enabled": False,
    }


def test_parse_empty_and_comments():
    assert parse_config("") == {}
    assert parse_config("# nothing here\n\n   \n") == {}
    assert parse_config("run.workers = 2") == {"run.workers": 2}
    assert parse_config("evaluation.quantiles = []\n") == {"evaluation.quantiles": []}


def test_parse_numbers():
    values = parse_config("a.b = 1\na.c = -2.5\na.d = 1e-3\na.e = +4")
    assert values == {"a.b": 1, "a.c": -2.5, "a.d": 1e-3, "a.e": 4}
    assert isinstance(values["a.b"], int)
    assert isinstance(values["a.d"], float)


def test_parse_errors():
    with pytest.raises(ConfigError) as e:
        parse_config("mesh.h 0.1")
    assert e.value.line == 1

    with pytest.raises(ConfigError) as e:
        parse_config("mesh.h = 0.1\nmodel.gamma = = 2")
    assert e.value.line == 2

    with pytest.raises(ConfigError):
        parse_config("mesh.h = [0.1, ")

    with pytest.raises(ConfigError):
        parse_config("mesh.h = 0.1\nmesh.h = 0.2")


def test_parse_value():
    assert parse_value("3") == 3
    assert parse_value(" true ") is True
    assert parse_value("[1, 2]") == [1, 2]
    assert parse_value("lshape") == "lshape"
    assert parse_value("not a value") == "not a value"


def test_env_overrides():
    environ = {
        "RBFUQ_MESH__H": "0.25",
        "RBFUQ_RUN__WORKERS": "3",
        "rbfuq_model__gamma": "0",
        "RBFUQ_NOSECTION": "1",
        "HOME": "/root",
    }
    assert env_overrides(environ) == {"mesh.h": 0.25, "run.workers": 3, "model.gamma": 0}


def test_defaults():
    config = PipelineConfig()
    assert config.dim == 18
    assert config.field_dim == 18
    assert config["mesh.h"] == 0.1
    assert config.detrend == 1
    assert config.distribution() == DistributionSpec.uniform(18)
    assert config.evaluation_distribution() == DistributionSpec.uniform(18)
    assert [s.variance for s in config.field_specs()] == [100.0, 2.25, 900.0]
    assert config.field_specs() == model_problem_specs()
    assert config.svd_options() == {"energy_fraction": DEFAULTS["metamodel.energy_fraction"]}
    assert config.as_dict() == DEFAULTS


def test_normal_variances():
    config = PipelineConfig({"field.distribution": "normal"})
    assert [s.variance for s in config.field_specs()] == [9.0, 0.25, 100.0]
    assert config.distribution() == DistributionSpec.normal(18)
    assert config.baseline_rule(config.distribution()) is QuadratureRule.GAUSS_HERMITE

    # explicit variances win
    config = PipelineConfig({"field.distribution": "normal", "field1.variance": 4.0})
    assert [s.variance for s in config.field_specs()] == [4.0, 0.25, 100.0]


def test_derived_values():
    config = PipelineConfig(
        {
            "model.dirichlet_sigma": 0.1,
            "metamodel.kernel": "gaussian",
            "metamodel.detrend": -1,
            "metamodel.abs_error": 1e-6,
            "screening.policy": "threshold",
            "screening.fraction": 0.9,
            "evaluation.distribution": "normal",
        }
    )
    assert config.dim == 19
    assert config.field_dim == 18
    assert config.detrend is None
    assert config.svd_options() == {"abs_error": 1e-6}
    assert config.kernel(0.5) == Gaussian(0.5)
    assert config.reduction_policy().fraction == 0.9
    assert config.reduction_policy().top_k is None
    assert config.evaluation_distribution() == DistributionSpec.normal(19)
    assert config.distribution() == DistributionSpec.uniform(19)

    config = PipelineConfig({"metamodel.shape": 2.0})
    assert config.kernel(0.5) == Multiquadric(2.0)


@pytest.mark.parametrize(
    "values",
    [
        {"mesh.h": 0},
        {"mesh.h": 1.5},
        {"mesh.h": "fine"},
        {"mesh.geometry": "circle"},
        {"field.distribution": "beta"},
        {"field1.variance": -1.0},
        {"field2.terms": 0},
        {"field2.terms": 2.5},
        {"screening.top_k": 19},
        {"screening.top_k": 0},
        {"screening.fraction": 0},
        {"screening.policy": "random"},
        {"screening.full_hessian": 1},
        {"metamodel.kernel": "cubic"},
        {"metamodel.shape": -1.0},
        {"metamodel.detrend": 2},
        {"evaluation.l_add": 99},
        {"evaluation.quantiles": [0.5, 1.0]},
        {"evaluation.quantiles": []},
        {"evaluation.quantiles": ["median"]},
        {"evaluation.skip": 0},
        {"baseline.rule": "trapezoid"},
        {"baseline.level": 3},
        {"run.workers": 0},
        {"no.such_key": 1},
    ],
)
def test_invalid(values):
    with pytest.raises(ConfigError):
        PipelineConfig(values)


def test_replace():
    config = PipelineConfig({"mesh.h": 0.5})
    other = config.replace(run__workers=4, model__gamma=100.0)
    assert other["mesh.h"] == 0.5
    assert other["run.workers"] == 4
    assert other["model.gamma"] == 100.0
    assert config["run.workers"] == 1
    assert other.explicit == {"mesh.h", "run.workers", "model.gamma"}


def test_load_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("mesh.h = 0.5\nrun.workers = 2\n")
    config = load_config(path, environ={"RBFUQ_RUN__WORKERS": "3"}, overrides={"model.gamma": 100.0})
    assert config["mesh.h"] == 0.5
    assert config["run.workers"] == 3
    assert config["model.gamma"] == 100.0

    assert load_config(environ={})["mesh.h"] == 0.1

    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg", environ={})

    path.write_text("mesh.h = \n")
    with pytest.raises(ConfigError):
        load_config(path, environ={})


def test_parse_paths():
    text = "run.output_dir = out/run-1\na.b = /tmp/x.csv\na.c = ~/runs\na.d = \"./out\"\n"
    assert parse_config(text) == {"run.output_dir": "out/run-1", "a.b": "/tmp/x.csv", "a.c": "~/runs", "a.d": "./out"}
    assert parse_value("out/run1") == "out/run1"
    with pytest.raises(ConfigError):
        parse_config("run.output_dir = ./out")


def test_package_exports():
    import rbfuq
    import rbfuq.config

    for name in rbfuq.config.__all__:
        assert getattr(rbfuq, name) is getattr(rbfuq.config, name)
    assert rbfuq.PipelineConfig({"mesh.h": 0.5})["mesh.h"] == 0.5
