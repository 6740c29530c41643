import json

import pytest

from odrl.errors import ConfigError
from odrl.evaluation import ABLATION_FIELDS, ablation_sweep
from odrl.pipeline import (
    PipelineCache,
    PipelineConfig,
    build_vocab,
    collect_dataset,
    evaluate_model,
    load_config,
    make_suites,
    run_point,
    train_model,
)

TINY = {
    "seed": 3,
    "suites": {"eval_general": 3, "eval_safety": 3, "train_general": 3, "train_safety": 3},
    "vocab": {"K": 16, "max_iters": 20, "n_recovery": 200},
    "collect": {"n_episodes": 4},
    "train": {"total_iters": 30, "bc_pretrain_iters": 20, "critic_warmup_iters": 20, "hidden": [16, 16]},
}


def tiny():
    return PipelineConfig.from_dict(TINY)


def test_defaults():
    cfg = PipelineConfig()
    assert (cfg.suites.eval_general, cfg.suites.eval_safety) == (137, 20)
    assert cfg.vocab.K == 256 and cfg.collect.mixture == "noisy-0.2:1,noisy-0.4:1"
    assert cfg.reward.w_imitation == 0.1 and cfg.reward.c_collision == -10.0
    assert cfg.train.gamma == 0.9 and cfg.train.alpha == 0.1 and cfg.train.batch_size == 8


def test_config_round_trip(tmp_path):
    cfg = tiny()
    assert PipelineConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    path = tmp_path / "c.json"
    path.write_text(json.dumps(TINY))
    assert load_config(path) == cfg


@pytest.mark.parametrize(
    "doc",
    [
        {"nope": {}},
        {"vocab": {"K": 1}},
        {"vocab": {"Kay": 3}},
        {"suites": []},
        {"collect": {"mixture": "gaussian:1"}},
        {"train": {"gamma": 1.5}},
    ],
)
def test_invalid_configs(doc):
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict(doc)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_overrides():
    cfg = tiny().with_overrides(alpha=0.4, w_imitation=0.2, c_event=-5, mixture="noisy-0.4:1", seed=9)
    assert cfg.train.alpha == 0.4 and cfg.reward.w_imitation == 0.2
    assert cfg.reward.c_collision == cfg.reward.c_offroad == cfg.reward.c_offroute == -5.0
    assert cfg.collect.mixture == "noisy-0.4:1" and cfg.seed == 9 and cfg.train.seed == 9


def test_suites_distinct_and_seeded():
    a, b = make_suites(tiny()), make_suites(tiny())
    assert a == b
    seeds = [s for _, s in a.values()]
    assert len(set(seeds)) == 4


def test_single_point_sweep_matches_direct_call():
    cfg = tiny()
    rows, scatter = ablation_sweep("Alpha", [0.1], cfg)
    suites = make_suites(cfg)
    vocab = build_vocab(cfg, suites["train_general"][0] + suites["train_safety"][0])
    ds = collect_dataset(cfg, vocab, suites)
    ck, _ = train_model(cfg, ds, vocab)
    rep = evaluate_model(ck, suites, vocab)
    assert len(rows) == 1 and tuple(rows[0]) == ABLATION_FIELDS
    for k in ABLATION_FIELDS[2:]:
        assert rows[0][k] == getattr(rep, k)
    assert scatter == [(rep.rc_general, 1.0 - rep.cr_safety)]


def test_alpha_grid_shape_and_rerun():
    grid = [0.0, 0.1, 0.2, 0.4, 1.0]
    rows, _ = ablation_sweep("Alpha", grid, tiny())
    assert [r["value"] for r in rows] == [repr(a) for a in grid]
    again = [run_point(tiny(), "Alpha", a, cache=PipelineCache()) for a in grid]
    assert [r["src"] for r in rows] == [rep.src for rep in again]


def test_reward_and_mixture_axes(tmp_path):
    rows, _ = ablation_sweep("RewardWeights", [(0.1, 1.0)], tiny(), workdir=tmp_path)
    assert rows[0]["axis"] == "RewardWeights"
    rows, _ = ablation_sweep("Mixture", ["noisy-0.4:1"], tiny(), workdir=tmp_path)
    assert rows[0]["value"] == "noisy-0.4:1"
    assert len(list(tmp_path.glob("ckpt_*.odck"))) == 2
