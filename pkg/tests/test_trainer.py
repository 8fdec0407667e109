import csv

import numpy as np
import pytest

from omnet import tensor as T
from omnet.backbone import NetworkConfig, build, build_cascade
from omnet.errors import EmptyDatasetError
from omnet.phantom import generate_dataset
from omnet.sampler import prepare_case, transfer_predicate
from omnet.tensor import Tensor
from omnet.trainer import (
    CurriculumSchedule,
    PatchPool,
    assemble_batch,
    split_features,
    task_inputs,
    train_curriculum,
    train_mc_baseline,
    verify_transfers,
    write_trace_csv,
)

SMALL = dict(patch=(16, 16, 8), base_channels=4, feature_channels=6, depth=2)


@pytest.fixture(scope="module")
def cases():
    return [prepare_case(v, l, b, name=f"c{i}") for i, (_, v, l, b) in enumerate(generate_dataset(3, seed=11))]


def test_learning_rate_halves_every_four_epochs():
    s = CurriculumSchedule(lr0=1e-3)
    assert [s.lr(e) for e in (0, 3, 4, 7, 8, 19)] == [1e-3, 1e-3, 5e-4, 5e-4, 2.5e-4, 6.25e-5]
    assert s.total_epochs == 20


def test_active_tasks_follow_stage_boundaries():
    s = CurriculumSchedule(stage_epochs=(1, 1, 18))
    assert s.active_tasks(0) == (1,)
    assert s.active_tasks(1) == (1, 2)
    assert all(s.active_tasks(e) == (1, 2, 3) for e in range(2, 20))
    naive = CurriculumSchedule.for_mode("om-net0")
    assert naive.active_tasks(0) == (1, 2, 3) and not naive.transfer and not naive.curriculum
    with_transfer = CurriculumSchedule.for_mode("om-netd")
    assert with_transfer.transfer and not with_transfer.curriculum


def test_schedule_round_trip_and_validation():
    s = CurriculumSchedule.desk()
    assert CurriculumSchedule.from_dict(s.to_dict()) == s
    assert s.stage_epochs == (1, 1, 6)
    with pytest.raises(ValueError):
        CurriculumSchedule(stage_epochs=(0, 0, 0))
    with pytest.raises(ValueError):
        CurriculumSchedule.for_mode("unknown")


def test_epoch_counts_scale_with_desk_factor():
    s = CurriculumSchedule(desk_scale=1e-3, batch_per_task=10)
    assert s.epoch_counts() == (400, 400, 200)
    assert s.steps_per_epoch() == 40


def _batch(rng, n, fill=None):
    labels = rng.integers(0, 5, size=(n, 4, 4, 2))
    if fill is not None:
        labels[:] = fill
    images = rng.standard_normal((n, 4, 4, 2, 4)).astype(np.float32)
    return images, labels


def test_concat_then_split_recovers_each_task():
    rng = np.random.default_rng(0)
    per_task = {1: _batch(rng, 3), 2: _batch(rng, 2), 3: _batch(rng, 4)}
    plan, images, labels = assemble_batch(per_task)
    assert images.shape[0] == 9 and plan.offsets == (0, 3, 5)
    parts = split_features(Tensor(images), plan)
    for t in (1, 2, 3):
        np.testing.assert_array_equal(parts[t].data, per_task[t][0])


def test_transfers_follow_predicate_and_land_in_harder_tasks():
    rng = np.random.default_rng(1)
    imgs, labs = _batch(rng, 4)
    labs[0] = 2  # all complete tumour: transfers to task 2 only
    labs[1] = 4  # all core: transfers to tasks 2 and 3
    labs[2] = 1
    per_task = {1: (imgs, labs), 2: _batch(rng, 2, fill=1), 3: _batch(rng, 2, fill=3)}
    plan, images, labels = assemble_batch(per_task)
    verify_transfers(plan, labels)
    for target in (2, 3):
        for src, i in plan.transfers.get(target, []):
            assert src < target and transfer_predicate(per_task[src][1][i], target)
    assert (1, 0) in plan.transfers[2] and (1, 1) in plan.transfers[3]
    assert (1, 0) not in plan.transfers.get(3, [])
    feats, lab3 = task_inputs(split_features(Tensor(images), plan), labels, plan, 3)
    assert feats.shape[0] == 2 + len(plan.transfers[3])
    assert set(np.unique(lab3)) <= {0, 1}
    off, _ = plan.span(1)
    np.testing.assert_array_equal(feats.data[2], images[off + 1])


def test_no_transfer_when_disabled():
    rng = np.random.default_rng(2)
    imgs, labs = _batch(rng, 2, fill=4)
    plan, _, _ = assemble_batch({1: (imgs, labs), 2: _batch(rng, 1)}, transfer=False)
    assert plan.transfers == {}


def test_transferred_patch_gradient_reaches_its_batch_slot():
    rng = np.random.default_rng(3)
    imgs, labs = _batch(rng, 2)
    labs[1] = 3
    plan, images, labels = assemble_batch({1: (imgs, labs), 3: _batch(rng, 1, fill=3)})
    x = Tensor(images, requires_grad=True)
    parts = split_features(x, plan)
    f, _ = task_inputs(parts, labels, plan, 3)
    T.backward(T.sum_all(f))
    np.testing.assert_array_equal(x.grad[1], 1.0)  # transferred into task 3
    np.testing.assert_array_equal(x.grad[0], 0.0)
    np.testing.assert_array_equal(x.grad[2], 1.0)


def test_patch_pool_is_deterministic(cases):
    a = PatchPool(cases, 3, (16, 16, 8), np.random.default_rng(5))
    b = PatchPool(cases, 3, (16, 16, 8), np.random.default_rng(5))
    a.refill(10)
    b.refill(10)
    assert a.next(7) == b.next(7)


def test_pool_without_eligible_cases():
    _, v, l, b = generate_dataset(1, seed=2)[0]
    healthy = prepare_case(v, np.where(l >= 2, 1, l).astype(np.uint8), b)
    with pytest.raises(EmptyDatasetError):
        PatchPool([healthy], 2, (16, 16, 8), np.random.default_rng(0))


def _tiny_schedule(**kw):
    values = dict(stage_epochs=(1, 1, 1), desk_scale=4e-5, batch_per_task=2, lr0=0.01, check_transfers=True)
    values.update(kw)
    return CurriculumSchedule(**values)


def test_curriculum_trace_stages_and_csv(cases, tmp_path):
    model = build(NetworkConfig(**SMALL))
    result = train_curriculum(model, cases, _tiny_schedule(), seed=0)
    stages = [r.stage for r in result.trace]
    assert stages == sorted(stages) and set(stages) == {1, 2, 3}
    assert all(set(r.losses) == set(range(1, r.stage + 1)) for r in result.trace)
    path = tmp_path / "trace.csv"
    write_trace_csv(result.trace, path)
    rows = list(csv.DictReader(open(path)))
    assert rows[0]["loss_task2"] == "" and rows[-1]["loss_task3"] != ""


def test_curriculum_is_reproducible(cases):
    runs = []
    for _ in range(2):
        model = build(NetworkConfig(**SMALL))
        train_curriculum(model, cases, _tiny_schedule(stage_epochs=(1, 0, 1)), seed=4)
        runs.append(model.state_dict())
    assert all(np.array_equal(runs[0][k], runs[1][k]) for k in runs[0])


def test_prefetch_matches_inline(cases):
    states = []
    for prefetch in (0, 2):
        model = build(NetworkConfig(**SMALL))
        train_curriculum(model, cases, _tiny_schedule(stage_epochs=(1, 0, 0)), seed=1, prefetch=prefetch)
        states.append(model.state_dict())
    assert all(np.array_equal(states[0][k], states[1][k]) for k in states[0])


def test_naive_multitask_trains_all_tasks_from_start(cases):
    model = build(NetworkConfig(**SMALL))
    result = train_curriculum(model, cases, CurriculumSchedule.for_mode(
        "om-net0", stage_epochs=(1, 0, 0), desk_scale=4e-5, batch_per_task=2), seed=0)
    assert all(set(r.losses) == {1, 2, 3} for r in result.trace)


def test_model_cascade_trains_each_member_alone(cases):
    cascade = build_cascade(NetworkConfig(**SMALL))
    before = [n.state_dict() for n in cascade.nets]
    result = train_mc_baseline(cascade, cases, _tiny_schedule(stage_epochs=(1, 0, 0)), seed=0)
    assert [r.stage for r in result.trace] == sorted(r.stage for r in result.trace)
    for net, old in zip(cascade.nets, before):
        assert any(not np.array_equal(old[k], v) for k, v in net.state_dict().items())


def test_empty_dataset():
    with pytest.raises(EmptyDatasetError):
        train_curriculum(build(NetworkConfig(**SMALL)), [], _tiny_schedule())
