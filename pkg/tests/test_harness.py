import dataclasses
import json
import math

import numpy as np
import pytest
import torch

from synthetic import ShortestPathPolicy, glyph_dataset
from thinkerlab import checkpoint as ckpt
from thinkerlab.clustering import extract_features_batch, fit_clusters
from thinkerlab.cli import main as cli_main
from thinkerlab.colormaze import ColorMaze
from thinkerlab.config import (
    EnvConfig,
    GanConfig,
    PipelineConfig,
    PolicyNetConfig,
    config_from_dict,
    config_to_dict,
    desk_config,
    load_config,
    save_config,
)
from thinkerlab.errors import ConfigError, DataError, IntegrityError, StateError
from thinkerlab.evaluate import evaluate_zero_shot, greedy_policy
from thinkerlab.metrics import FIELD_NAMES, MetricsRecord, MetricsWriter, read_metrics
from thinkerlab.plots import emit_plots, final_test_means, image_grid
from thinkerlab.ppo import ImpalaCnn, policy_forward
from thinkerlab.runner import ablate_clusters, run_dir_for, run_experiment, run_hash
from thinkerlab.styletransfer import train_translator

TINY_GAN = GanConfig(iterations=2, batch_size=4, n_critic=1, base_channels=4, res_blocks=1)


def tiny_config(tmp_path, **over):
    cfg = desk_config(
        env=EnvConfig(obs_size=32, n_train_levels=8),
        total_steps=512,
        eval_every=256,
        eval_episodes=3,
        n_envs=2,
        seeds=(0,),
        gan=TINY_GAN,
        pipeline=PipelineConfig(n_clusters=2, init_dataset_size=100),
        output_dir=str(tmp_path / "runs"),
    )
    ppo = dataclasses.replace(cfg.ppo, train_batch=256, minibatch=64, rollout_fragment=128)
    cfg = dataclasses.replace(
        cfg, ppo=ppo, policy_net=dataclasses.replace(cfg.policy_net, channels=(4, 4), dense=16)
    )
    return dataclasses.replace(cfg, **over)


# -- config serialization ----------------------------------------------------


def test_config_json_roundtrip(tmp_path):
    cfg = tiny_config(tmp_path)
    path = tmp_path / "cfg.json"
    save_config(cfg, path)
    loaded = load_config(path)
    assert loaded == cfg


def test_config_rejects_unknown_keys(tmp_path):
    cfg = tiny_config(tmp_path)
    data = config_to_dict(cfg)
    data["pixie_dust"] = 1
    with pytest.raises(ConfigError, match="pixie_dust"):
        config_from_dict(data)
    data = config_to_dict(cfg)
    data["ppo"]["momentum"] = 0.9
    with pytest.raises(ConfigError, match="momentum"):
        config_from_dict(data)


def test_config_validation_errors(tmp_path):
    cfg = tiny_config(tmp_path)
    with pytest.raises(ConfigError):
        dataclasses.replace(cfg, augment="sharpen").validate()
    with pytest.raises(ConfigError):
        dataclasses.replace(cfg, seeds=()).validate()
    with pytest.raises(ConfigError):
        cfg.with_agent("dqn")


# -- metrics -----------------------------------------------------------------


def _record(step, **over):
    base = dict(
        step=step,
        train_reward_mean=0.5,
        test_reward_mean=0.4,
        test_reward_median=0.5,
        test_reward_q25=0.25,
        test_reward_q75=0.75,
        policy_loss=-0.01,
        value_loss=0.1,
        entropy=1.5,
        approx_kl=0.001,
        wall_clock=1.0,
    )
    base.update(over)
    return MetricsRecord(**base)


def test_metrics_roundtrip_and_monotonicity(tmp_path):
    path = tmp_path / "metrics.csv"
    writer = MetricsWriter(path)
    writer.append(_record(100))
    writer.append(_record(200, train_reward_mean=math.nan))
    with pytest.raises(DataError):
        writer.append(_record(200))
    records = read_metrics(path)
    assert [r.step for r in records] == [100, 200]
    assert math.isnan(records[1].train_reward_mean)
    # resume keeps enforcing monotonicity
    writer2 = MetricsWriter(path)
    with pytest.raises(DataError):
        writer2.append(_record(150))
    writer2.append(_record(300))
    assert [r.step for r in read_metrics(path)] == [100, 200, 300]


# -- checkpoints -------------------------------------------------------------


def test_array_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {
        "a": rng.normal(size=(3, 4)).astype(np.float32),
        "b": rng.normal(size=(7,)),  # float64
        "c": rng.integers(0, 100, size=(2, 2)),
    }
    ckpt.save_arrays(tmp_path / "blob", arrays, {"kind": "test"})
    loaded, meta = ckpt.load_arrays(tmp_path / "blob")
    assert meta == {"kind": "test"}
    for key in arrays:
        assert arrays[key].dtype == loaded[key].dtype
        assert np.array_equal(arrays[key], loaded[key])


def test_policy_roundtrip_identical_logits(tmp_path):
    torch.manual_seed(0)
    model = ImpalaCnn(5, 32, PolicyNetConfig(channels=(4, 4), dense=16))
    ckpt.save_policy(tmp_path / "policy", model)
    loaded = ckpt.load_policy(tmp_path / "policy")
    obs = np.random.default_rng(0).integers(0, 256, size=(5, 32, 32, 3)).astype(np.uint8)
    la, va = policy_forward(model, obs)
    lb, vb = policy_forward(loaded, obs)
    assert np.array_equal(la, lb) and np.array_equal(va, vb)


def test_cluster_model_roundtrip_exact_posteriors(tmp_path):
    rng = np.random.default_rng(1)
    feats = rng.normal(size=(120, 6))
    model = fit_clusters(feats, 3, seed=0)
    ckpt.save_cluster_model(tmp_path / "clusters", model)
    loaded = ckpt.load_cluster_model(tmp_path / "clusters")
    probe = rng.normal(size=(30, 6))
    assert np.array_equal(model.posterior(probe), loaded.posterior(probe))


def test_translator_roundtrip_identical_outputs(tmp_path):
    data = glyph_dataset(n_per_style=16, size=16)
    translator = train_translator(data, TINY_GAN, seed=0)
    ckpt.save_translator(tmp_path / "translator", translator)
    loaded = ckpt.load_translator(tmp_path / "translator")
    x = torch.rand(4, 3, 16, 16, generator=torch.Generator().manual_seed(0)) * 2 - 1
    labels = torch.tensor([0, 1, 2, 0])
    with torch.inference_mode():
        ya = translator.generator(x, labels)
        yb = loaded.generator(x, labels)
        sa, ca = translator.discriminator(x)
        sb, cb = loaded.discriminator(x)
    assert torch.equal(ya, yb) and torch.equal(sa, sb) and torch.equal(ca, cb)


def test_tampered_manifest_is_integrity_error(tmp_path):
    ckpt.save_arrays(tmp_path / "blob", {"a": np.arange(6, dtype=np.float32)}, {})
    manifest_path = (tmp_path / "blob").with_suffix(".json")
    manifest = json.loads(manifest_path.read_text())
    manifest["arrays"][0]["shape"] = [7]
    manifest_path.write_text(json.dumps(manifest))
    with pytest.raises(IntegrityError):
        ckpt.load_arrays(tmp_path / "blob")


def test_corrupt_payload_is_integrity_error(tmp_path):
    ckpt.save_arrays(tmp_path / "blob", {"a": np.arange(6, dtype=np.float32)}, {})
    bin_path = (tmp_path / "blob").with_suffix(".bin")
    raw = bytearray(bin_path.read_bytes())
    raw[3] ^= 0xFF
    bin_path.write_bytes(bytes(raw))
    with pytest.raises(IntegrityError):
        ckpt.load_arrays(tmp_path / "blob")
    bin_path.write_bytes(b"")
    with pytest.raises(IntegrityError):
        ckpt.load_arrays(tmp_path / "blob")


def test_optimizer_roundtrip(tmp_path):
    torch.manual_seed(0)
    model = ImpalaCnn(5, 32, PolicyNetConfig(channels=(4, 4), dense=16))
    opt = torch.optim.Adam(model.parameters(), lr=1e-3)
    loss = model(torch.rand(2, 3, 32, 32))[0].sum()
    loss.backward()
    opt.step()
    ckpt.save_optimizer(tmp_path / "opt", opt)
    opt2 = torch.optim.Adam(model.parameters(), lr=1e-3)
    ckpt.load_optimizer_into(tmp_path / "opt", opt2)
    sd1, sd2 = opt.state_dict(), opt2.state_dict()
    assert sd1["param_groups"] == sd2["param_groups"]
    for pid in sd1["state"]:
        for key in sd1["state"][pid]:
            v1, v2 = sd1["state"][pid][key], sd2["state"][pid][key]
            assert torch.equal(v1, v2) if isinstance(v1, torch.Tensor) else v1 == v2


# -- evaluation --------------------------------------------------------------


def test_evaluate_zero_shot_counts_and_bounds():
    torch.manual_seed(0)
    model = ImpalaCnn(5, 32, PolicyNetConfig(channels=(4, 4), dense=16))
    cfg = EnvConfig(obs_size=32, max_steps=64)
    stats = evaluate_zero_shot(model, cfg, n_episodes=16, rng=np.random.default_rng(0))
    assert len(stats.rewards) == 16
    assert all(0.0 <= r <= 1.0 for r in stats.rewards)
    assert stats.q25 <= stats.median <= stats.q75


def test_shortest_path_oracle_scores_mean_one():
    cfg = EnvConfig(obs_size=32)
    oracle = ShortestPathPolicy(cfg)
    stats = evaluate_zero_shot(oracle, cfg, n_episodes=32, rng=np.random.default_rng(7))
    assert stats.mean == 1.0


def test_evaluator_seed_draws_identical_across_modes():
    cfg = EnvConfig(obs_size=32, max_steps=32)
    torch.manual_seed(0)
    model = ImpalaCnn(5, 32, PolicyNetConfig(channels=(4, 4), dense=16))
    a = evaluate_zero_shot(model, cfg, n_episodes=8, rng=np.random.default_rng(3))
    b = evaluate_zero_shot(greedy_policy(model), cfg, n_episodes=8, rng=np.random.default_rng(3))
    assert np.allclose(sorted(a.rewards), sorted(b.rewards))


# -- runner ------------------------------------------------------------------


@pytest.mark.slow
def test_run_experiment_layout_resume_and_idempotence(tmp_path, monkeypatch):
    monkeypatch.delenv("THINKERLAB_RUNS", raising=False)
    cfg = tiny_config(tmp_path)
    run_dir = run_experiment(cfg)
    assert (run_dir / "config.json").exists()
    seed_dir = run_dir / "seed_0"
    assert (seed_dir / "DONE").exists()
    records = read_metrics(seed_dir / "metrics.csv")
    steps = [r.step for r in records]
    assert steps == sorted(set(steps)) and steps[-1] >= cfg.total_steps
    summary = json.loads((seed_dir / "summary.json").read_text())
    assert summary["ppo_env_steps"] >= cfg.total_steps
    assert summary["total_env_steps"] == summary["ppo_env_steps"] + summary["init_env_steps"]

    # idempotence: re-running is a no-op (mtime of metrics unchanged)
    before = (seed_dir / "metrics.csv").stat().st_mtime_ns
    run_experiment(cfg)
    assert (seed_dir / "metrics.csv").stat().st_mtime_ns == before


@pytest.mark.slow
def test_interrupted_run_resumes_to_identical_metrics(tmp_path, monkeypatch):
    monkeypatch.delenv("THINKERLAB_RUNS", raising=False)
    from thinkerlab.pipeline import PolicyTrainer

    cfg = tiny_config(tmp_path, total_steps=768, eval_every=256)
    reference = run_experiment(dataclasses.replace(cfg, output_dir=str(tmp_path / "ref")))
    ref_records = read_metrics(reference / "seed_0" / "metrics.csv")

    calls = {"n": 0}
    original = PolicyTrainer.train_one_batch

    def interrupting(self):
        calls["n"] += 1
        if calls["n"] == 2:
            raise KeyboardInterrupt
        return original(self)

    monkeypatch.setattr(PolicyTrainer, "train_one_batch", interrupting)
    with pytest.raises(KeyboardInterrupt):
        run_experiment(cfg)
    monkeypatch.setattr(PolicyTrainer, "train_one_batch", original)

    run_dir = run_experiment(cfg)  # resumes from the checkpoint
    resumed = read_metrics(run_dir / "seed_0" / "metrics.csv")
    assert [r.step for r in resumed] == [r.step for r in ref_records]
    for a, b in zip(resumed, ref_records):
        for field in FIELD_NAMES:
            if field == "wall_clock":
                continue
            va, vb = getattr(a, field), getattr(b, field)
            assert va == vb or (math.isnan(va) and math.isnan(vb)), field


@pytest.mark.slow
def test_run_experiment_thinker_persists_bootstrap(tmp_path, monkeypatch):
    monkeypatch.delenv("THINKERLAB_RUNS", raising=False)
    cfg = tiny_config(tmp_path).with_agent("thinker")
    run_dir = run_experiment(cfg)
    seed_dir = run_dir / "seed_0"
    assert (seed_dir / "clusters.json").exists()
    assert (seed_dir / "translator.json").exists()
    assert (seed_dir / "clusters.png").exists()
    assert (seed_dir / "translation_preview.png").exists()
    info = json.loads((seed_dir / "bootstrap.json").read_text())
    loaded = ckpt.load_cluster_model(seed_dir / "clusters")
    assert loaded.n == info["n_clusters"]
    summary = json.loads((seed_dir / "summary.json").read_text())
    assert summary["init_env_steps"] > 0


def test_run_hash_ignores_output_location(tmp_path):
    a = tiny_config(tmp_path)
    b = dataclasses.replace(a, output_dir=str(tmp_path / "elsewhere"), name="x")
    assert run_hash(a) == run_hash(b)
    c = dataclasses.replace(a, total_steps=a.total_steps + 1)
    assert run_hash(a) != run_hash(c)


def test_runs_env_var_overrides_root(tmp_path, monkeypatch):
    cfg = tiny_config(tmp_path)
    monkeypatch.setenv("THINKERLAB_RUNS", str(tmp_path / "override"))
    assert str(run_dir_for(cfg)).startswith(str(tmp_path / "override"))


def test_lock_excludes_concurrent_runs(tmp_path, monkeypatch):
    monkeypatch.delenv("THINKERLAB_RUNS", raising=False)
    cfg = tiny_config(tmp_path)
    run_dir = run_dir_for(cfg)
    seed_dir = run_dir / "seed_0"
    seed_dir.mkdir(parents=True)
    (seed_dir / ".lock").write_text("12345")
    with pytest.raises(StateError, match="locked"):
        run_experiment(cfg)


# -- plots -------------------------------------------------------------------


def _fake_run(tmp_path, name, finals):
    run_dir = tmp_path / name
    for seed, final in enumerate(finals):
        writer = MetricsWriter(run_dir / f"seed_{seed}" / "metrics.csv")
        writer.append(_record(100, test_reward_mean=final / 2))
        writer.append(_record(200, test_reward_mean=final))
    save_config(tiny_config(tmp_path), run_dir / "config.json")
    return run_dir


def test_emit_plots_quartiles_match_recomputation(tmp_path):
    finals = [0.1, 0.4, 0.3, 0.8, 0.5]
    run_dir = _fake_run(tmp_path, "ppo-test", finals)
    stats = emit_plots([run_dir], tmp_path / "plots")
    assert (tmp_path / "plots" / "generalization_boxplot.png").exists()
    assert (tmp_path / "plots" / "training_curves.png").exists()
    box = stats["ppo"]
    # independent recomputation from metrics.csv
    recomputed = [read_metrics(p / "metrics.csv")[-1].test_reward_mean
                  for p in sorted(run_dir.glob("seed_*"))]
    assert box["med"] == pytest.approx(np.percentile(recomputed, 50), abs=1e-9)
    assert box["q1"] == pytest.approx(np.percentile(recomputed, 25), abs=1e-9)
    assert box["q3"] == pytest.approx(np.percentile(recomputed, 75), abs=1e-9)
    assert final_test_means(run_dir) == finals


def test_emit_plots_missing_metrics_lists_runs(tmp_path):
    run_dir = tmp_path / "ppo-x"
    (run_dir / "seed_0").mkdir(parents=True)
    with pytest.raises(DataError, match="seed_0"):
        emit_plots([run_dir], tmp_path / "plots")


def test_image_grid_writes_png(tmp_path):
    imgs = np.random.default_rng(0).integers(0, 256, size=(3, 16, 16, 3)).astype(np.uint8)
    image_grid([imgs, imgs], tmp_path / "grid.png")
    from PIL import Image

    with Image.open(tmp_path / "grid.png") as im:
        assert im.size[1] > 32  # two rows plus padding


# -- ablation ----------------------------------------------------------------


@pytest.mark.slow
def test_ablate_clusters_report(tmp_path, monkeypatch):
    monkeypatch.delenv("THINKERLAB_RUNS", raising=False)
    cfg = tiny_config(tmp_path, seeds=(0, 1))
    report = ablate_clusters(cfg, counts=(2, 3))
    assert len(report["runs"]) == 2 * 2  # |counts| x |seeds|
    assert set(report["test_median_by_count"]) == {2, 3}
    for entry in report["runs"]:
        run_dir = entry["run_dir"]
        loaded = ckpt.load_cluster_model(f"{run_dir}/seed_{entry['seed']}/clusters")
        assert loaded.n == entry["n_clusters"]


# -- CLI ---------------------------------------------------------------------


@pytest.mark.slow
def test_cli_train_eval_preview_plot(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("THINKERLAB_RUNS", raising=False)
    cfg = tiny_config(tmp_path).with_agent("thinker")
    cfg_path = tmp_path / "cfg.json"
    save_config(cfg, cfg_path)

    assert cli_main(["train", "--config", str(cfg_path)]) == 0
    run_dir = capsys.readouterr().out.strip().splitlines()[-1]

    assert cli_main(["eval", "--run", f"{run_dir}/seed_0", "--episodes", "3", "--seed", "1"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["episodes"] == 3

    assert (
        cli_main(
            ["translate-preview", "--run", f"{run_dir}/seed_0", "--out", str(tmp_path / "p.png"), "--seed", "2"]
        )
        == 0
    )
    capsys.readouterr()
    assert (tmp_path / "p.png").exists()

    assert cli_main(["plot", run_dir, "--out", str(tmp_path / "plots")]) == 0
    capsys.readouterr()
    assert (tmp_path / "plots" / "plot_stats.json").exists()


def test_cli_bootstrap(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("THINKERLAB_RUNS", raising=False)
    cfg = tiny_config(tmp_path)
    cfg_path = tmp_path / "cfg.json"
    save_config(cfg, cfg_path)
    assert cli_main(["bootstrap", "--config", str(cfg_path), "--out", str(tmp_path / "boot")]) == 0
    out_dir = capsys.readouterr().out.strip()
    assert (tmp_path / "boot" / "bootstrap_seed_0" / "translator.json").exists()
    assert out_dir.endswith("bootstrap_seed_0")
