import math

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from cbslab.problem import make_rng
from cbslab.trainer import (
    AdamState,
    LeastSquaresTask,
    NonFiniteGradient,
    OptimizerConfig,
    SchedulerConfig,
    TeacherStudentTask,
    TrainerConfig,
    TrainingDiverged,
    adam_step,
    clip_by_global_norm,
    eval_cadence,
    ewa_update,
    load_trainer_config,
    lr_at,
    make_task,
    steps_to_target,
    train,
)


# ------------------------------------------------------------------ Adam

def test_zero_gradient_is_noop():
    p = np.array([1.0, -2.0, 3.0])
    new, state = adam_step(AdamState.zeros_like(p), p, np.zeros(3), lr=0.1)
    np.testing.assert_array_equal(new, p)
    assert state.t == 1


def test_first_step_closed_form():
    p = np.zeros(4)
    g = np.array([0.3, -0.1, 0.02, -0.4])
    lr, eps = 0.01, 1e-8
    new, _ = adam_step(AdamState.zeros_like(p), p, g, lr, eps=eps, clip_norm=10.0)
    np.testing.assert_allclose(new, -lr * g / (np.abs(g) + eps), rtol=1e-12)


def test_clipping_scales_before_moments():
    g = np.array([6.0, 8.0])  # norm 10
    clipped, norm = clip_by_global_norm(g, 1.0)
    assert norm == 10.0
    np.testing.assert_allclose(clipped, 0.1 * g)
    _, state = adam_step(AdamState.zeros_like(g), np.zeros(2), g, 0.1, beta1=0.9, beta2=0.99, clip_norm=1.0)
    np.testing.assert_allclose(state.m, 0.1 * 0.1 * g)
    np.testing.assert_allclose(state.v, 0.01 * (0.1 * g) ** 2)


def test_adam_errors():
    state = AdamState.zeros_like(np.zeros(2))
    with pytest.raises(NonFiniteGradient) as info:
        adam_step(state, np.zeros(2), np.array([np.nan, 1.0]), 0.1)
    assert info.value.step == 0
    with pytest.raises(ValueError):
        adam_step(state, np.zeros(2), np.zeros(3), 0.1)


# ------------------------------------------------------------------ schedules

def test_schedule_examples():
    peak = 3e-3
    const = SchedulerConfig("constant", warmup_fraction=0.25)
    assert lr_at(const, 249, peak, max_steps=1000) == peak
    assert lr_at(const, 0, peak, max_steps=1000) == pytest.approx(peak / 250)
    cos = SchedulerConfig("cosine", total_steps=1000)
    assert lr_at(cos, 1000, peak) == pytest.approx(0.0, abs=1e-18)
    wsd = SchedulerConfig("wsd", total_steps=1000, decay_fraction=0.2)
    assert lr_at(wsd, 900, peak) == pytest.approx(peak / 2)
    assert lr_at(wsd, 800, peak) == peak
    with pytest.raises(ValueError):
        lr_at(wsd, 1001, peak)
    with pytest.raises(ValueError):
        SchedulerConfig("cosine")
    with pytest.raises(ValueError):
        SchedulerConfig("linear")


@settings(max_examples=40, deadline=None)
@given(
    kind=st.sampled_from(["cosine", "wsd"]),
    total=st.integers(10, 3000),
    fw=st.floats(0.0, 0.5),
    df=st.floats(0.05, 1.0),
    floor=st.floats(0.0, 1e-4),
)
def test_schedule_shape(kind, total, fw, df, floor):
    peak = 1e-3
    if kind == "wsd" and fw + df > 1:
        with pytest.raises(ValueError):
            SchedulerConfig(kind, warmup_fraction=fw, total_steps=total, decay_fraction=df)
        return
    cfg = SchedulerConfig(kind, warmup_fraction=fw, total_steps=total, decay_fraction=df, floor_lr=floor)
    lrs = np.array([lr_at(cfg, s, peak) for s in range(total + 1)])
    w = math.ceil(fw * total)
    assert np.all(lrs >= -1e-18) and np.all(lrs <= peak * (1 + 1e-12))
    after = lrs[w:]
    assert np.all(np.diff(after) <= 1e-15)
    if 0 < w <= total:
        assert abs(lrs[w] - lrs[w - 1]) <= peak / w + 1e-15


# ------------------------------------------------------------------ EWA and cadence

def test_ewa_examples():
    theta, xi = np.array([1.0, 2.0]), np.array([5.0, 6.0])
    np.testing.assert_array_equal(ewa_update(xi, theta, 0.0), theta)
    np.testing.assert_array_equal(ewa_update(xi, theta, 1.0), xi)
    x1 = ewa_update(np.zeros(1), np.ones(1), 0.5)
    x2 = ewa_update(x1, np.ones(1), 0.5)
    assert (x1[0], x2[0]) == (0.5, 0.75)


@given(traj=st.lists(st.floats(-100, 100), min_size=1, max_size=50), tau=st.floats(0, 1))
def test_ewa_convex_hull(traj, tau):
    xi = np.array([traj[0]])
    for t in traj[1:]:
        xi = ewa_update(xi, np.array([t]), tau)
    assert min(traj) - 1e-9 <= xi[0] <= max(traj) + 1e-9


def test_cadence_examples():
    steps = eval_cadence(16, 1000)
    assert {1, 2, 4, 8, 16} <= set(steps)
    assert {12, 13, 14, 15, 16} <= set(steps)
    assert steps == sorted(set(steps)) and steps[-1] == 16
    assert not set(eval_cadence(500, 1000)) & {1000}
    assert 300 in eval_cadence(1000, 100) and 700 in eval_cadence(1000, 100)
    with pytest.raises(ValueError):
        eval_cadence(0, 10)


@given(n=st.integers(1, 5000), e=st.integers(1, 2000))
def test_cadence_properties(n, e):
    steps = eval_cadence(n, e)
    assert all(a < b for a, b in zip(steps, steps[1:]))
    assert steps[-1] == n and steps[0] >= 1


# ------------------------------------------------------------------ tasks

def test_teacher_student_gradient():
    task = TeacherStudentTask(d_in=6, width=5, teacher_width=3, noise=0.1)
    rng = make_rng(0)
    worst = 0.0
    for _ in range(100):
        params = task.init_params(rng)
        x, y = task.sample(7, rng)
        g = task.grad(params, x, y)
        fd = np.empty_like(params)
        h = 1e-6
        for i in range(params.size):
            e = np.zeros_like(params)
            e[i] = h
            fd[i] = (task.loss(params + e, x, y) - task.loss(params - e, x, y)) / (2 * h)
        worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(fd))
    assert worst <= 1e-5


def test_lsq_task_gradient_and_floor():
    task = LeastSquaresTask.from_params(d=8, val_size=2000)
    rng = make_rng(1)
    x, y = task.sample(5, rng)
    p = rng.standard_normal(8)
    g = task.grad(p, x, y)
    e = 1e-6 * np.eye(8)
    fd = np.array([(task.loss(p + e[i], x, y) - task.loss(p - e[i], x, y)) / 2e-6 for i in range(8)])
    np.testing.assert_allclose(g, fd, rtol=1e-6)
    assert task.optimum_loss() == pytest.approx(0.01, rel=0.1)
    assert make_task("least-squares", d=8).n_params == 8
    assert make_task("mlp", d_in=3, width=2).n_params == 8
    with pytest.raises(ValueError):
        make_task("resnet")


# ------------------------------------------------------------------ training loop

def small_cfg(**kw):
    base = dict(task="lsq", task_params={"d": 16, "val_size": 2000}, batch_size=8, lr=1e-2,
                eval_interval=10, max_steps=300, seed=3)
    base.update(kw)
    return TrainerConfig.from_dict(base)


def test_training_is_deterministic():
    a, b = train(small_cfg()), train(small_cfg())
    assert a.evals == b.evals
    assert [e.step for e in a.evals] == eval_cadence(300, 10)
    assert train(small_cfg(seed=4)).evals != a.evals


def test_target_extremes():
    assert steps_to_target(small_cfg(), 1e9) == 1
    floor = LeastSquaresTask.from_params(d=16, val_size=2000).optimum_loss()
    res = train(small_cfg(), floor * 0.5)
    assert res.status == "not-reached" and res.steps is None


def test_divergence_is_distinct():
    with pytest.raises(TrainingDiverged):
        train(small_cfg(lr=1e200, optimizer={"grad_clip_norm": 1e300}, max_steps=50))


def test_decaying_schedule_horizon():
    cfg = small_cfg(scheduler={"kind": "wsd", "total_steps": 120, "warmup_fraction": 0.1})
    res = train(cfg)
    assert res.evals[-1].step == 120
    assert res.evals[-1].lr == pytest.approx(lr_at(cfg.scheduler, 119, cfg.lr))


def test_config_validation_and_io(tmp_path):
    with pytest.raises(ValueError):
        OptimizerConfig(beta2=1.0)
    with pytest.raises(ValueError):
        TrainerConfig(ewa_decay=1.5)
    cfg = small_cfg(scheduler={"kind": "cosine", "total_steps": 100})
    path = tmp_path / "t.yaml"
    path.write_text(yaml.safe_dump(cfg.to_dict()))
    assert load_trainer_config(path) == cfg


def test_teacher_student_trains():
    cfg = TrainerConfig(task="teacher-student", task_params={"d_in": 8, "width": 6, "val_size": 1000},
                        batch_size=32, lr=1e-2, max_steps=400, eval_interval=50, seed=0)
    res = train(cfg)
    assert res.evals[-1].val_loss_ewa < res.evals[0].val_loss_ewa


@pytest.mark.slow
def test_linear_scaling_b16_b32():
    # target gap 6e-5 above the validation floor keeps B=16 -> 32 in the linear regime
    floor = LeastSquaresTask.from_params().optimum_loss()
    best = {}
    for bsz in (16, 32):
        centre = 1.78e-3 * math.sqrt(bsz / 4)
        means = []
        for lr in (centre * 10 ** -0.25, centre, centre * 10 ** 0.25):
            runs = [steps_to_target(TrainerConfig(batch_size=bsz, lr=lr, eval_interval=5, max_steps=40_000, seed=s),
                                    floor + 6e-5) for s in range(5)]
            if all(runs):
                means.append(np.mean(runs))
        best[bsz] = min(means)
    assert 1.6 <= best[16] / best[32] <= 2.2
