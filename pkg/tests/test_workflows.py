import numpy as np
import pytest

from exflow.errors import ConfigError, ShapeMismatchError
from exflow.placement import Topology
from exflow.synth import SynthConfig, generate_markov_trace
from exflow.workflows import SWEEP_COLUMNS, holdout_consistency, sample_size_sweep, subsample_tokens, sweep_csv

TOPO = Topology(2, 2)


@pytest.fixture(scope="module")
def trace():
    return generate_markov_trace(SynthConfig(8, 4, 800, 0.9, 4, seed=3, shuffle_seed=7))


def test_subsample_deterministic_and_distinct(trace):
    a = subsample_tokens(trace, 100, seed=1, repeat=0)
    assert a == subsample_tokens(trace, 100, seed=1, repeat=0)
    assert a != subsample_tokens(trace, 100, seed=1, repeat=1)
    assert a.num_tokens == 100
    assert subsample_tokens(trace, 800, seed=1, repeat=0) == trace


def test_subsample_bounds(trace):
    with pytest.raises(ConfigError):
        subsample_tokens(trace, 801, 0, 0)


def test_sweep_rows(trace):
    res = sample_size_sweep(trace, [50, 800], 3, seed=0, topology=TOPO)
    small, full = res["rows"]
    assert len(small["locality_gpu_samples"]) == 3
    assert full["locality_gpu_mean"] == res["full"]["locality_gpu"]
    assert full["locality_gpu_std"] == 0.0
    csv = sweep_csv(res).splitlines()
    assert csv[0].split(",") == list(SWEEP_COLUMNS)
    assert len(csv) == 3


@pytest.mark.parametrize("kwargs", [dict(sizes=[0]), dict(sizes=[801]), dict(repeats=0)])
def test_sweep_errors(trace, kwargs):
    args = dict(sizes=[10], repeats=1, seed=0, topology=TOPO)
    args.update(kwargs)
    with pytest.raises(ConfigError):
        sample_size_sweep(trace, **args)


def test_holdout_self_and_independent(trace):
    same = holdout_consistency(trace, trace, TOPO)
    assert same["ratio"] == {"intra_gpu": 1.0, "intra_node": 1.0}
    other = generate_markov_trace(SynthConfig(8, 4, 800, 0.9, 4, seed=4, shuffle_seed=7))
    res = holdout_consistency(trace, other, TOPO)
    assert 0.9 <= res["ratio"]["intra_gpu"] <= 1.1
    assert np.isfinite(res["solve_report"]["objective"])


def test_holdout_shape_mismatch(trace):
    other = generate_markov_trace(SynthConfig(8, 5, 10, 0.9, 4, seed=4))
    with pytest.raises(ShapeMismatchError):
        holdout_consistency(trace, other, TOPO)


def test_sweep_trend_is_monotone():
    trace = generate_markov_trace(SynthConfig(16, 6, 6000, 0.8, 4, seed=21, shuffle_seed=22))
    rows = sample_size_sweep(trace, [100, 3000], 5, seed=1, topology=TOPO)["rows"]
    assert rows[1]["locality_gpu_mean"] >= rows[0]["locality_gpu_mean"] - 0.02
