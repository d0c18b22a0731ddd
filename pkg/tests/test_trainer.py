import numpy as np
import pytest

from hydra_ensemble.architectures import ModelConfig, build_architecture
from hydra_ensemble.dataset import METADATA_FIELDS, SyntheticSpec, generate_synthetic, group_by_region, metadata_means
from hydra_ensemble.augmentation import CropSpec, CropStyle
from hydra_ensemble.errors import ConfigError
from hydra_ensemble.micronet import build_network, dense, flatten
from hydra_ensemble.trainer import (
    PAPER_ROSTER,
    TrainingData,
    TrainPlan,
    _fit,
    body_seed,
    cost_report,
    evaluate_ensemble,
    log_csv,
    lr_at,
    make_head,
    paper_roster,
    predict_scores,
    spawn_heads,
    train_body,
    train_head,
    train_heads,
)

TINY_MODEL = ModelConfig(input_size=12, width=4, blocks=1, fc_width=16, fc_layers=1, dropout=0.0, metadata_gain=0.05)
TINY_PLAN = TrainPlan(body_epochs=2, head_epochs=2, head_lr_schedule=((1, 1e-4), (1, 1e-5)), batch_size=8).scaled(30)


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    spec = SyntheticSpec(num_classes=3, train_regions=24, eval_regions=12, test_regions=3, image_size=24,
                         box_range=(8, 10))
    mans = generate_synthetic(spec, 3, tmp_path_factory.mktemp("tiny"))
    return TrainingData(mans["train"], metadata_means(mans["train"]), mans["eval"], TINY_MODEL)


def heads(*rows, seed=0):
    return [make_head(i + 1, *row, seed=seed + i, min_size=6) for i, row in enumerate(rows)]


# ---------------------------------------------------------------------------
# plans, schedule, cost
# ---------------------------------------------------------------------------


def test_default_schedule():
    plan = TrainPlan()
    assert [lr_at(plan, e) for e in range(5)] == [1e-4, 1e-5, 1e-5, 1e-5, 1e-6]
    for bad in (-1, 5):
        with pytest.raises(ConfigError):
            lr_at(plan, bad)


def test_plan_validation():
    with pytest.raises(ConfigError):
        TrainPlan(head_epochs=4)
    with pytest.raises(ConfigError):
        TrainPlan(head_epochs=1, head_lr_schedule=((1, 0.0),))
    with pytest.raises(ConfigError):
        TrainPlan(batch_size=0)
    with pytest.raises(ConfigError):
        TrainPlan.from_dict({"epochs": 3})
    nwpu = TrainPlan(body_epochs=8, head_epochs=8, head_lr_schedule=((2, 1e-4), (4, 1e-5), (2, 1e-6)))
    assert TrainPlan.from_dict(nwpu.to_dict()) == nwpu
    assert [lr_at(nwpu.scaled(10), e) for e in (0, 2, 7)] == pytest.approx([1e-3, 1e-4, 1e-5], rel=1e-15)


def test_cost_examples():
    rep = cost_report(TrainPlan(), paper_roster())
    assert (rep.architectures, rep.heads, rep.hydra_epochs, rep.independent_epochs) == (2, 12, 72, 132)
    assert rep.ratio == 132 / 72
    one = heads(("dense", "EXT-PAN", "flip", "unweighted"))
    assert cost_report(TrainPlan(), one).ratio == 1.0
    two = heads(("dense", "EXT-PAN", "flip", "unweighted"), ("residual", "EXT-PAN", "flip", "unweighted"))
    assert cost_report(TrainPlan(), two).ratio == 1.0


def test_paper_roster_shape():
    roster = paper_roster()
    assert len(roster) == 12 == len(PAPER_ROSTER)
    assert sum(h.architecture == "dense" for h in roster) == 8
    assert len({h.seed for h in roster}) == 12
    assert roster[2].crop.style.multispectral and roster[2].crop.min_size == 96


# ---------------------------------------------------------------------------
# bodies and forking
# ---------------------------------------------------------------------------


def test_zero_body_epochs_is_the_initialisation(tiny):
    plan = TrainPlan(body_epochs=0, seed=4)
    net, rows = train_body(tiny, "dense", plan)
    init = build_architecture("dense", tiny.train.m, len(METADATA_FIELDS), TINY_MODEL, body_seed(plan, "dense"))
    assert rows == [] and net.checksum() == init.checksum()


def test_body_training_is_deterministic_and_logged(tiny):
    a, rows = train_body(tiny, "residual", TINY_PLAN)
    b, _ = train_body(tiny, "residual", TINY_PLAN)
    assert a.checksum() == b.checksum()
    assert [(r["epoch"], r["split"]) for r in rows] == [(0, "train"), (0, "eval"), (1, "train"), (1, "eval")]
    assert all(r["lr"] == TINY_PLAN.body_lr for r in rows)
    assert log_csv(rows).splitlines()[0] == "epoch,split,loss,accuracy,lr"


def test_spawn_fidelity(tiny):
    bodies = {arch: train_body(tiny, arch, TrainPlan(body_epochs=0))[0] for arch in ("dense", "residual")}
    roster = paper_roster(min_size=6)
    jobs = spawn_heads(bodies, roster)
    assert len(jobs) == 12
    for job in jobs:
        assert job.net.checksum() == bodies[job.config.architecture].checksum()
        assert job.net.params[0]["w"] is not bodies[job.config.architecture].params[0]["w"]
    with pytest.raises(ConfigError, match="residual"):
        spawn_heads({"dense": bodies["dense"]}, roster)


def test_zero_head_epochs_equals_body(tiny):
    body, _ = train_body(tiny, "dense", TrainPlan(body_epochs=0))
    head = heads(("dense", "EXT-PAN", "none", "unweighted"))[0]
    net, rows = train_head(body, head, TrainPlan(head_epochs=0, head_lr_schedule=()), tiny)
    assert rows == [] and net.checksum() == body.checksum()


def test_heads_diverge_by_config_and_ignore_parallelism(tiny):
    body, _ = train_body(tiny, "dense", TINY_PLAN)
    roster = heads(
        ("dense", "EXT-PAN", "flip", "unweighted"),
        ("dense", "EXT-PAN", "flip", "frequency#2"),
        ("dense", "ORIG-PAN", "shift", "unweighted"),
    )
    # same seed for the first two, so only the weighting differs
    roster[1] = make_head(2, "dense", "EXT-PAN", "flip", "frequency#2", seed=roster[0].seed, min_size=6)
    jobs = spawn_heads({"dense": body}, roster)
    serial = train_heads(jobs, TINY_PLAN, tiny, n_jobs=1)
    parallel = train_heads(jobs, TINY_PLAN, tiny, n_jobs=2)
    sums = [net.checksum() for net, _ in serial]
    assert sums == [net.checksum() for net, _ in parallel]
    assert len(set(sums)) == 3 and body.checksum() not in sums
    # the jobs still hold the untouched body copies
    assert all(job.net.checksum() == body.checksum() for job in jobs)
    lrs = [r["lr"] for r in serial[0][1] if r["split"] == "train"]
    assert lrs == [lr_at(TINY_PLAN, 0), lr_at(TINY_PLAN, 1)]


def test_same_config_different_seed_changes_only_the_stream(tiny):
    body, _ = train_body(tiny, "dense", TrainPlan(body_epochs=0))
    a, b = (make_head(k, "dense", "EXT-PAN", "flip", "unweighted", seed=k) for k in (1, 2))
    ja, jb = spawn_heads({"dense": body}, [a, b])
    assert ja.net.checksum() == jb.net.checksum()
    na, _ = train_head(body, a, TINY_PLAN, tiny)
    nb, _ = train_head(body, b, TINY_PLAN, tiny)
    assert na.checksum() != nb.checksum()


@pytest.fixture(scope="module")
def separable(tmp_path_factory):
    spec = SyntheticSpec(num_classes=2, train_regions=100, eval_regions=20, test_regions=2, image_size=24,
                         box_range=(10, 12), noise=0.0, nuisance=0.0, multiplicity=(1.0,))
    mans = generate_synthetic(spec, 11, tmp_path_factory.mktemp("sep"))
    return TrainingData(mans["train"], metadata_means(mans["train"]), mans["eval"],
                        ModelConfig(dropout=0.0, metadata_gain=0.05))


@pytest.mark.parametrize("arch", ["residual", "dense"])
def test_separable_two_class_set_is_learned(separable, arch):
    plan = TrainPlan(body_epochs=6, batch_size=8, seed=1).scaled(30)
    _, rows = train_body(separable, arch, plan)
    final = {r["split"]: r["accuracy"] for r in rows if r["epoch"] == 5}
    assert final["train"] == 1.0
    assert final["eval"] > 0.9


def test_noise_free_pair_fits_a_single_layer(separable):
    samples = separable.samples(separable.train, CropSpec(CropStyle.ORIG_PAN), True)
    net = build_network((12, 12, 3), [flatten(), dense(3)], 0, seed=0)
    rows = _fit(net, samples, None, [1e-3] * 6, None, 0, 8, (12, 12), None, "one layer")
    assert rows[-1]["accuracy"] == 1.0


def test_head_resumes_near_the_body(separable):
    plan = TrainPlan(body_epochs=6, batch_size=8, seed=2).scaled(30)
    body, body_rows = train_body(separable, "dense", plan)
    body_acc = [r["accuracy"] for r in body_rows if r["split"] == "eval"][-1]
    head = make_head(1, "dense", "EXT-PAN", "zoom", "frequency#2", seed=9, min_size=6)
    _, rows = train_head(body, head, plan, separable)
    first = [r["accuracy"] for r in rows if r["split"] == "eval"][0]
    assert first >= body_acc - 0.10


def test_ensemble_evaluation_counts_regions(tiny):
    body, _ = train_body(tiny, "residual", TINY_PLAN)
    roster = heads(("residual", "EXT-PAN", "flip", "unweighted"), ("residual", "ORIG-PAN", "flip", "unweighted"),
                   ("residual", "EXT-MULTI", "flip", "unweighted"))
    nets = [net for net, _ in train_heads(spawn_heads({"residual": body}, roster), TINY_PLAN, tiny)]
    scores = {h.head_id: predict_scores(n, tiny.eval, h.crop, tiny) for h, n in zip(roster, nets)}
    index = group_by_region(tiny.eval)
    ev = evaluate_ensemble(scores, index, tiny.eval.region_labels(), tiny.eval.false_detection_index)
    assert set(ev.fused_labels) == set(index)
    assert set(ev.head_accuracy) == {"1", "2", "3"}
    assert ev.gain == ev.fused_accuracy - max(ev.head_accuracy.values())
    # every image of the eval split is scored, including small multi-spectral crops
    assert len(scores["3"]) == len(tiny.eval.records)
