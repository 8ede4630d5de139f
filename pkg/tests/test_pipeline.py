from dataclasses import replace

import pytest

from iod.detector import ClipStore, DetectorConfig
from iod.metrics import evaluate, kfold_evaluate
from iod.pipeline import benchmark_config, kfold, run_split, split_seed
from iod.simulator import SimConfig, generate_dataset


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    cfg = replace(SimConfig(), width=96, height=96, n_frames=10)
    return generate_dataset(cfg, 6, 2, tmp_path_factory.mktemp("pipe"), workers=1)


CFG = benchmark_config(input_size=96, epochs=2)


def test_benchmark_preset_keeps_recipe_shape():
    cfg = benchmark_config()
    base = DetectorConfig()
    assert (cfg.T, cfg.R, cfg.epochs, cfg.lr_steps, cfg.sta) == (base.T, base.R, base.epochs, base.lr_steps, base.sta)
    assert benchmark_config(lr=0.5).lr == 0.5


def test_split_seeds_differ():
    assert len({split_seed(0, s) for s in (1, 2, 3)}) == 3


def test_kfold_average_matches_independent_splits(data):
    rep, results = kfold(data, CFG, 4, workers=1)
    store = ClipStore(data, CFG.input_size)
    again = [run_split(data, s, CFG, 4, store) for s in (1, 2, 3)]
    independent = kfold_evaluate([evaluate(r.detections, data, r.split) for r in again])
    assert independent.average == rep.average
    assert [r.split for r in results] == [1, 2, 3]


def test_process_pool_gives_same_result(data):
    a, _ = kfold(data, CFG, 4, workers=1)
    b, _ = kfold(data, CFG, 4, workers=3)
    assert a.average == b.average
