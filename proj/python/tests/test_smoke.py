import math

import numpy as np
import pytest

import dmcl

SMALL = {
    "architecture": {"conv_channels_g": [4, 4, 4], "conv_channels_branch": [4, 4, 8],
                     "embedding_dims": [8, 8]},
    "train_config": {"batch_k": 4, "total_iterations": 3, "learning_rate": 1e-3},
}


def test_losses_hand_values():
    same = np.tile([[0.3, -1.2, 0.5]], (2, 1))
    value, ga, gp = dmcl.nt_xent(same, same, temperature=0.5)
    assert abs(value - math.log(2)) < 1e-9
    assert ga.shape == (2, 3) and gp.shape == (2, 3)
    eye = np.eye(2)
    assert abs(dmcl.nt_xent(eye, eye, temperature=1.0)[0] - (math.log(2) - 1)) < 1e-9
    assert abs(dmcl.mixed_domain_loss([0.5], [0.7]) - math.log(0.5)) < 1e-12
    assert abs(dmcl.domain_loss([0.5] * 3, [0.5] * 2) - 2 * math.log(0.5)) < 1e-12
    assert abs(dmcl.cross_entropy(np.zeros((4, 10)), [0, 1, 2, 9]) - math.log(10)) < 1e-9
    with pytest.raises(ValueError):
        dmcl.nt_xent(np.zeros((2, 3)), np.zeros((2, 3)), temperature=0.0)


def test_synthesis_and_mixup():
    rng = np.random.default_rng(1)
    imgs = rng.random((4, 10, 10))
    neg = dmcl.synthesize(imgs, "N")
    assert neg.shape == (4, 3, 10, 10)
    np.testing.assert_allclose(dmcl.to_negative(dmcl.to_negative(imgs[0])), imgs[0], atol=1e-15)
    np.testing.assert_array_equal(dmcl.synthesize(imgs, "C", seed=3), dmcl.synthesize(imgs, "C", seed=3))
    edges = dmcl.to_edge(np.full((16, 16), 0.5))
    assert not edges.any()
    lam = dmcl.sample_lambda(1.0, 10000, seed=2)
    assert 0.48 <= lam.mean() <= 0.52
    assert np.allclose(dmcl.mix(np.full(3, 0.2), np.full(3, 0.6), 0.5), 0.4)


def test_presets():
    assert {"desk", "xnist-full", "office-home"} <= set(dmcl.preset_names())
    cfg = dmcl.preset("xnist-full")
    assert cfg["train_config"]["total_iterations"] == 7000
    assert cfg["train_config"]["learning_rate"] == pytest.approx(2e-4)


def test_dataset_train_eval_export(tiny_root, tmp_path):
    ds = dmcl.Dataset.from_manifest(tiny_root)
    assert ds.split_sizes() == {"source_toi": 8, "source_irt": 8, "target_irt": 8, "target_toi_eval": 8}
    assert ds.image_shape == (12, 12)
    assert all(ok for _, ok, _ in ds.check())

    seen = []
    run = dmcl.train(ds, "desk", SMALL, checkpoint_dir=tmp_path / "run", progress=seen.append)
    assert run.iteration == 3 and len(seen) == 3
    assert [m["iteration"] for m in run.metrics()] == [0, 1, 2]
    assert run.eval_samples_consumed(ds) == 0
    result = run.evaluate(ds)
    assert result["n_samples"] == 8 and 0.0 <= result["target_toi_accuracy"] <= 1.0

    loaded = dmcl.load_checkpoint(tmp_path / "run" / "checkpoint.dmcl")
    assert loaded.evaluate(ds) == result

    emb, tasks, domains, classes, splits = run.export_features(ds, "G_D", samples_per_split=4, seed=1)
    assert emb.shape == (16, 8)
    assert splits[:4] == ["source_irt"] * 4 and tasks[0] == "IRT"
    score = dmcl.disentanglement_score(emb, tasks, domains)
    assert set(score) == {"domain_alignment", "task_separation", "degenerate"}

    with pytest.raises(ValueError):
        dmcl.train(ds, "desk", {**SMALL, "train_config": {"batch_k": 9}})


def test_ablation_rows(tiny_root):
    ds = dmcl.Dataset.from_manifest(tiny_root)
    cfg = {**SMALL, "train_config": {**SMALL["train_config"], "total_iterations": 1}}
    rows = dmcl.run_ablation(ds, "desk", cfg, n_seeds=2)
    assert len(rows) == 8
    assert [r["variant"] for r in rows[:4]] == ["full", "no_dual_mixup", "no_contrastive", "source_only"]
    assert all(r["eval_samples_consumed"] == 0 for r in rows)
