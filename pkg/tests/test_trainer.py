import json

import numpy as np
import pytest

from msol.config import preset
from msol.errors import ConfigError, NumericError
from msol.objective import Schedule
from msol.policy import build_policy, load_policy
from msol.trainer import Runner, net_spec, reset_due, resolve_tasks, task_reset, train, updates_for
from msol.transfer import protocol, train_prior_for


def tiny(family="taxi", frames=300, **over):
    cfg = preset(f"{family}-desk")
    cfg.policy.hidden = [8]
    cfg.policy.option_embed = 4
    cfg.trainer.frames_per_task = frames
    cfg.trainer.log_interval = 5
    cfg.env.envs_per_task = 2
    cfg.env.tasks = [0, 1]
    for key, value in over.items():
        section, name = key.split("__")
        setattr(getattr(cfg, section), name, value)
    return cfg


def test_identical_runs_give_identical_metrics(tmp_path):
    cfg = tiny()
    train(cfg, metrics_path=tmp_path / "a.jsonl")
    train(cfg, metrics_path=tmp_path / "b.jsonl")
    a, b = (tmp_path / "a.jsonl").read_bytes(), (tmp_path / "b.jsonl").read_bytes()
    assert a and a == b


def test_seed_changes_the_run(tmp_path):
    a = train(tiny(trainer__seed=1)).records
    b = train(tiny(trainer__seed=2)).records
    assert a != b


def test_frame_accounting():
    cfg = tiny(frames=200)
    res = train(cfg)
    n_updates = updates_for(cfg, 200)
    assert n_updates == 200 // (2 * cfg.trainer.n_steps)
    assert res.records[-1]["update"] == n_updates
    assert res.records[-1]["frames"] == n_updates * 2 * cfg.trainer.n_steps
    assert [r["update"] for r in res.records] == list(range(5, n_updates + 1, 5))


def test_reset_schedule_is_staggered():
    due = {i: [u for u in range(1, 41) if reset_due(u, i, 4, 20)] for i in range(4)}
    assert due == {0: [20, 40], 1: [25], 2: [30], 3: [35]}
    assert not any(reset_due(u, 0, 4, 0) for u in range(100))
    assert not reset_due(0, 0, 1, 1)


def test_task_reset_only_touches_one_task():
    cfg = tiny()
    tasks = resolve_tasks("taxi", "taxi30", [0, 1, 2])
    spec = net_spec(cfg, 60, 6)
    rng = np.random.default_rng(0)
    prior, post = build_policy(spec, 3, rng)
    runner = Runner(tasks, 2, "train", np.random.SeedSequence(0), prior, post)
    for _ in range(3):
        runner.collect(5, 0.1)
    for store in post.stores():
        for key in store:
            store[key][...] += rng.normal(size=store[key].shape)
    before = {k: v.copy() for s in post.stores() for k, v in s.state().items()}
    first_before = runner.first.copy()
    task_reset(prior, post, runner, 1, rng)
    after = {k: v for s in post.stores() for k, v in s.state().items()}
    for key in before:
        if before[key].ndim and before[key].shape[0] == 3:  # per-task stacked heads
            assert np.array_equal(before[key][[0, 2]], after[key][[0, 2]]), key
    assert any(not np.array_equal(before[k][1], after[k][1]) for k in before if before[k].shape[:1] == (3,))
    assert runner.first[2:4].all() and np.array_equal(runner.first[[0, 1, 4, 5]], first_before[[0, 1, 4, 5]])
    assert np.all(runner.z_prev[2:4] == spec.n_options)


def test_segments_chain_options():
    cfg = tiny()
    tasks = resolve_tasks("taxi", "taxi30", [0])
    prior, post = build_policy(net_spec(cfg, 60, 6), 1, np.random.default_rng(0))
    runner = Runner(tasks, 3, "train", np.random.SeedSequence(1), prior, post)
    for _ in range(30):
        seg, _ = runner.collect(5, 0.1)
        z, zp, done, first = seg.z[0], seg.z_prev[0], seg.done[0], seg.first[0]
        for t in range(4):
            cont = done[:, t] == 0
            assert np.array_equal(zp[cont, t + 1], z[cont, t])
            assert np.array_equal(first[:, t + 1], done[:, t] == 1)
        assert np.all(zp[first] == 4) and np.all(seg.b[0][first] == 1)
        assert np.all(z[seg.b[0] == 0] == zp[seg.b[0] == 0])


def test_distral_matches_single_option_msol():
    base = tiny(frames=200, policy__termination=False, policy__n_options=1)
    base.transfer.distral_beta = 0.07
    base.objective.beta = Schedule(0.07)
    msol = train(base, tasks=resolve_tasks("taxi", "taxi30", [0, 1]))
    proto = protocol("taxi-transfer", "desk", base)
    proto.train_tasks = resolve_tasks("taxi", "taxi30", [0, 1])
    proto.config.trainer.seed = 0
    distral = train_prior_for("distral", proto, seed=0)
    assert distral.checksum() == msol.prior.checksum()


def test_single_option_never_switches():
    cfg = tiny(policy__termination=False, policy__n_options=1)
    tasks = resolve_tasks("taxi", "taxi30", [0])
    prior, post = build_policy(net_spec(cfg, 60, 6, 1), 1, np.random.default_rng(0), termination=False)
    runner = Runner(tasks, 2, "train", np.random.SeedSequence(2), prior, post)
    for _ in range(20):
        seg, _ = runner.collect(5, 0.1)
        assert np.all(seg.z == 0)
        assert np.array_equal(seg.b.astype(bool), seg.first)


def test_non_finite_parameters_abort_with_record(tmp_path, monkeypatch):
    import msol.trainer as tr

    real = tr.combined_update
    calls = {"n": 0}

    def poisoned(posterior, prior, *args, **kw):
        calls["n"] += 1
        if calls["n"] == 3:
            prior.store["pL.w"][...] = np.nan
        return real(posterior, prior, *args, **kw)

    monkeypatch.setattr(tr, "combined_update", poisoned)
    with pytest.raises(NumericError):
        train(tiny(), metrics_path=tmp_path / "m.jsonl")
    last = json.loads((tmp_path / "m.jsonl").read_text().splitlines()[-1])
    assert "error" in last


def test_checkpoints_written(tmp_path):
    cfg = tiny(trainer__checkpoint_every=0.5)
    train(cfg, out_dir=tmp_path)
    prior, _, manifest = load_policy(tmp_path / "final.npz")
    assert manifest["extra"]["family"] == "taxi"
    assert manifest["extra"]["tasks"] == [t.label for t in resolve_tasks("taxi", "taxi30", [0, 1])]
    assert prior.learned_termination
    assert (tmp_path / "checkpoint.npz").exists() and (tmp_path / "metrics.jsonl").exists()


def test_resolve_tasks_errors():
    with pytest.raises(ConfigError):
        resolve_tasks("taxi", "taxi30", [99])
    with pytest.raises(ConfigError):
        resolve_tasks("bandits", None, [2])
    assert len(resolve_tasks("taxi", "taxi30", None)) == 12


def test_bandits_tiny_run():
    res = train(tiny("bandits", frames=200))
    assert res.prior.spec.n_options == 2 and len(res.tasks) == 2
    assert all(np.isfinite(r["loss_total"]) for r in res.records)
