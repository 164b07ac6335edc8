"""Fast unit tests for the adaptation heads; the trained oracles live in test_adaptation_oracles.py."""

import numpy as np
import pytest

from voltron.adaptation import (
    BcConfig,
    Demo,
    Features,
    MapPool,
    PupHead,
    bc_adapt,
    collect_demos,
    extract,
    intent_curve,
    iou,
    load_demos,
    make_env,
    mean_pool,
    precision_metrics,
    save_demos,
)
from voltron.adaptation.common import BatchNorm1d
from voltron.adaptation.datasets import (
    load_grasp_dataset,
    load_refer_dataset,
    save_grasp_dataset,
    save_refer_dataset,
)
from voltron.adaptation.grasp import GraspConfig, check_labels, evaluate_head, grasp_adapt
from voltron.adaptation.refer import ReferConfig, accuracy, check_boxes, refer_adapt
from voltron.autodiff import Tensor, default_dtype, no_grad
from voltron.errors import CapabilityError, ConfigError, ContractError, DataError
from voltron.fixtures import grasp_examples, refer_examples
from voltron.model import VoltronModel
from voltron.rng import stream
from voltron.verify import toy_config, toy_vocab


@pytest.fixture(scope="module")
def vcond():
    return VoltronModel(toy_config("v-cond"), toy_vocab())


@pytest.fixture(scope="module")
def vgen():
    return VoltronModel(toy_config("v-gen"), toy_vocab())


# -- pooling -------------------------------------------------------------------------------

def test_map_single_row_is_projected_value(rng):
    with default_dtype(np.float64):
        pool = MapPool(rng, 16, n_seed=1, heads=4)
        row = Tensor(rng.standard_normal((2, 1, 16)), dtype=np.float64)
        out = pool(row).data
        expected = pool.norm(pool.attn.proj(pool.attn.value(row))).data
    np.testing.assert_allclose(out, expected, rtol=1e-13)


def test_map_is_permutation_invariant(rng):
    pool = MapPool(rng, 64, n_seed=1, heads=4)
    rows = rng.standard_normal((3, 10, 64)).astype(np.float32)
    perm = rng.permutation(10)
    with no_grad():
        a, b = pool(rows).data, pool(rows[:, perm]).data
    np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-7)
    assert a.shape == (3, 1, 64)


def test_map_permutation_is_exact_in_float64(rng):
    with default_dtype(np.float64):
        pool = MapPool(rng, 8, n_seed=2, heads=2)
        rows = rng.standard_normal((1, 6, 8))
        perm = np.array([5, 4, 3, 2, 1, 0])
        a, b = pool(rows).data, pool(rows[:, perm]).data
    np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-15)


def test_map_rejects_empty_rows(rng):
    pool = MapPool(rng, 8, heads=2)
    with pytest.raises(ContractError):
        pool(np.zeros((1, 0, 8)))
    with pytest.raises(ConfigError):
        MapPool(rng, 8, n_seed=0)


def test_mean_pool_examples(rng):
    x = rng.standard_normal(5)
    np.testing.assert_array_equal(mean_pool(np.tile(x, (1, 4, 1))).data[0], x.astype(np.float32))
    np.testing.assert_array_equal(mean_pool(np.stack([[x, -x]]).astype(np.float64)).data, np.zeros((1, 5)))
    rows = rng.standard_normal((2, 7, 3))
    loop = np.zeros((2, 3))
    for b in range(2):
        for r in range(7):
            loop[b] += rows[b, r]
    loop /= 7
    np.testing.assert_allclose(mean_pool(Tensor(rows, dtype=np.float64)).data, loop, rtol=1e-14)


def test_mean_pool_respects_key_mask():
    rows = np.array([[[1.0], [3.0], [100.0]]])
    out = mean_pool(Tensor(rows, dtype=np.float64), np.array([[True, True, False]])).data
    assert out.tolist() == [[2.0]]


# -- feature extraction -------------------------------------------------------------------

def test_extract_modes(vcond, rng):
    frames = rng.random((3, 32, 32, 3)).astype(np.float32)
    ids, lm = vcond.null_batch(3)
    vis = extract(vcond, frames, mode="visual")
    assert vis.rows.shape == (3, 16, 64) and vis.key_mask.all() and vis.lang is None
    enc = extract(vcond, frames, ids, lm, mode="encoder")
    assert enc.rows.shape == (3, 16 + 8, 64) and enc.key_mask.sum(axis=1).tolist() == [17] * 3
    null = extract(vcond, frames, mode="null")
    np.testing.assert_array_equal(null.rows, enc.rows)
    cat = extract(vcond, frames, ids, lm, mode="concat")
    assert cat.lang.shape == (3, 768)
    with pytest.raises(ContractError):
        extract(vcond, frames, mode="encoder")
    with pytest.raises(ConfigError):
        extract(vcond, frames, mode="telepathy")


def test_single_frames_are_duplicated_for_two_frame_models(vgen, rng):
    frame = rng.random((1, 32, 32, 3)).astype(np.float32)
    feats = extract(vgen, frame)
    assert feats.duplicated and feats.rows.shape == (1, 32, 64)
    pair = extract(vgen, np.stack([frame, frame], axis=1))
    np.testing.assert_array_equal(feats.rows, pair.rows)
    assert not extract(VoltronModel(toy_config("v-cond"), toy_vocab()), frame).duplicated


# -- grasp -----------------------------------------------------------------------------------

def test_pup_output_is_a_per_pixel_simplex(rng):
    head = PupHead(rng, 64, (4, 4), 8)
    probs = head.probabilities(rng.standard_normal((2, 16, 64)).astype(np.float32))
    assert probs.shape == (2, 3, 32, 32)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)


@pytest.mark.parametrize("p,grid", [(2, (3, 3)), (4, (2, 4)), (16, (2, 2))])
def test_pup_output_matches_frame_size(rng, p, grid):
    head = PupHead(rng, 8, grid, p, channels=(8, 8, 8, 8), heads=2)
    with no_grad():
        out = head(rng.standard_normal((1, grid[0] * grid[1], 8)).astype(np.float32))
    assert out.shape == (1, 3, grid[0] * p, grid[1] * p)


def test_pup_rejects_non_power_of_two_patch(rng):
    with pytest.raises(ConfigError):
        PupHead(rng, 8, (2, 2), 6)


def test_labels_outside_classes_are_rejected():
    with pytest.raises(DataError):
        check_labels(np.array([[0, 3]]))
    with pytest.raises(DataError):
        check_labels(np.array([[0.5, 1.0]]))


def test_precision_metrics_ranking():
    probs = np.array([[[0.9, 0.1], [0.8, 0.2]]])
    labels = np.array([[[0, 2], [1, 2]]])
    out = precision_metrics(probs, labels)
    assert out == {"top1": 1.0, "top1pct": 1.0, "top5pct": 1.0}
    assert precision_metrics(probs, np.array([[[1, 2], [0, 2]]]))["top1"] == 0.0


def test_precision_ties_go_to_lowest_index():
    probs = np.full((1, 2, 2), 0.5)
    assert precision_metrics(probs, np.array([[[0, 1], [1, 1]]]))["top1"] == 1.0
    assert precision_metrics(probs, np.array([[[1, 0], [0, 0]]]))["top1"] == 0.0


def test_untrained_grasp_head_sits_near_class_prior(vcond):
    frames, labels = grasp_examples(64, seed=3)
    feats = extract(vcond, frames)
    prior = float(np.mean(labels == 0))
    tops = [evaluate_head(PupHead(stream(s, "adapt", 9), 64, (4, 4), 8), feats, labels)["top1"] for s in range(4)]
    # an untrained head ranks pixels by a function of position that ignores content
    assert abs(np.mean(tops) - prior) <= 0.2


def test_grasp_fold_split(vcond):
    frames, labels = grasp_examples(6, seed=0)
    feats = extract(vcond, frames)
    res = grasp_adapt(feats, labels, 64, (4, 4), 8, GraspConfig(epochs=1, batch_size=4, folds=3))
    assert len(res.fold_metrics) == 3 and set(res.metrics) == {"top1", "top1pct", "top5pct"}
    with pytest.raises(DataError):
        grasp_adapt(feats.take([0, 1]), labels[:2], 64, (4, 4), 8, GraspConfig(folds=3))


# -- refer -----------------------------------------------------------------------------------

def test_iou_examples():
    box = np.array([0.1, 0.2, 0.3, 0.4])
    assert float(iou(box, box)) == pytest.approx(1.0)
    assert float(iou(box, np.array([0.5, 0.7, 0.1, 0.1]))) == 0.0
    assert float(iou(np.array([0, 0, 2, 1]), np.array([1, 0, 2, 1]))) == pytest.approx(1 / 3)
    assert accuracy(np.array([box, box]), np.array([box, [0.9, 0.9, 0.05, 0.05]])) == 0.5


def test_degenerate_gold_boxes_are_rejected():
    with pytest.raises(DataError):
        check_boxes(np.array([[0.1, 0.1, 0.0, 0.2]]))


def test_refer_adapt_reports_accuracy(vcond):
    frames, captions, boxes = refer_examples(16, seed=0)
    feats = extract(vcond, frames)
    res = refer_adapt(feats, boxes, feats, boxes, 64, ReferConfig(epochs=2, batch_size=8))
    assert 0.0 <= res.metrics["acc@0.25"] <= 1.0 and len(res.losses) == 4


# -- behaviour cloning -------------------------------------------------------------------------

def test_bc_constant_action_is_learned(vcond, rng):
    frames = rng.random((32, 32, 32, 3)).astype(np.float32)
    demos = [Demo(frames[i * 8:(i + 1) * 8], rng.random((8, 2)).astype(np.float32),
                  np.tile(np.float32([0.03, -0.05]), (8, 1))) for i in range(4)]
    res = bc_adapt(vcond, demos, BcConfig.for_profile("sim", steps=400, pool="mean"), seed=0)
    assert res.metrics["train_mse"] <= 1e-4


def test_bc_rejects_inconsistent_demos(vcond):
    a = Demo(np.zeros((2, 32, 32, 3)), np.zeros((2, 2)), np.zeros((2, 2)))
    b = Demo(np.zeros((2, 32, 32, 3)), np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(DataError, match="action"):
        bc_adapt(vcond, [a, b])
    with pytest.raises(DataError):
        bc_adapt(vcond, [])


def test_bc_profiles():
    assert BcConfig.for_profile("sim").width == 256 and BcConfig.for_profile("sim").steps == 20000
    real = BcConfig.for_profile("real")
    assert (real.width, real.batch_size, real.epochs) == (64, 256, 10)
    with pytest.raises(ConfigError):
        BcConfig.for_profile("lab")


def test_batchnorm_uses_running_stats_in_eval():
    bn = BatchNorm1d(2)
    x = Tensor(np.array([[0.0, 1.0], [2.0, 3.0]]), dtype=np.float64)
    out = bn(x).data
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(bn.running_mean.data, [0.1, 0.2])
    bn.training = False
    np.testing.assert_allclose(bn(x).data[:, 0], (x.data[:, 0] - 0.1) / np.sqrt(bn.running_var.data[0] + 1e-5))


# -- environments and demos ----------------------------------------------------------------------

def test_expert_solves_both_environments():
    for name in ("reach", "two-goal"):
        for i in range(10):
            env = make_env(name)
            env.reset(stream(0, "rollout", 1, i))
            while not env.done:
                env.step(env.expert_action())
            assert env.success()


def test_two_goal_instruction_names_target():
    env = make_env("two-goal")
    targets = set()
    for i in range(20):
        env.reset(stream(0, "rollout", 0, i))
        colour = env.goals[env.target][0]
        assert env.instruction == f"the {colour} block"
        assert env.goals[0][0] != env.goals[1][0]
        targets.add(env.target)
    assert targets == {0, 1}


def test_render_is_deterministic():
    a, b = make_env("reach"), make_env("reach")
    a.reset(stream(1, "rollout", 1, 0))
    b.reset(stream(1, "rollout", 1, 0))
    np.testing.assert_array_equal(a.render(), b.render())
    with pytest.raises(ValueError):
        make_env("maze")


def test_demos_cover_every_cell():
    demos = collect_demos("reach", 16, seed=0)
    cells = set()
    for i in range(16):
        env = make_env("reach")
        env.reset(stream(0, "rollout", 0, i), goal_cell=i)
        cells.add(env.goals[0][1])
    assert len(cells) == 16 and len(demos) == 16 and len(demos[0]) == 25


def test_demo_files_round_trip(tmp_path):
    demos = collect_demos("two-goal", 2, seed=4)
    save_demos(tmp_path / "d", demos)
    back = load_demos(tmp_path / "d")
    for a, b in zip(demos, back):
        assert a.utterance == b.utterance
        np.testing.assert_array_equal(a.frames, b.frames)
        np.testing.assert_array_equal(a.proprio, b.proprio)
        np.testing.assert_array_equal(a.actions, b.actions)
    blob = tmp_path / "d" / "demo000" / "demo.vdem"
    blob.write_bytes(blob.read_bytes()[:-3])
    with pytest.raises(DataError):
        load_demos(tmp_path / "d")


# -- on-disk datasets --------------------------------------------------------------------------

def test_grasp_dataset_round_trip(tmp_path):
    frames, labels = grasp_examples(3, seed=1)
    save_grasp_dataset(tmp_path, frames, labels)
    f2, l2 = load_grasp_dataset(tmp_path)
    np.testing.assert_array_equal(l2, labels)
    np.testing.assert_allclose(f2, frames, atol=1 / 255)
    (tmp_path / "img0001" / "label.png").unlink()
    with pytest.raises(DataError, match="label"):
        load_grasp_dataset(tmp_path)


def test_refer_dataset_round_trip(tmp_path):
    train, test = refer_examples(4, seed=0), refer_examples(2, seed=1)
    save_refer_dataset(tmp_path, train, test)
    (f, c, b), (tf, tc, tb) = load_refer_dataset(tmp_path)
    assert c == train[1] and tc == test[1]
    np.testing.assert_array_equal(b, train[2])
    (tmp_path / "train" / "img0000" / "box.txt").write_text("0.1 0.2\n")
    with pytest.raises(DataError):
        load_refer_dataset(tmp_path)


def test_missing_manifest(tmp_path):
    with pytest.raises(DataError, match="manifest"):
        load_grasp_dataset(tmp_path)


# -- intent ------------------------------------------------------------------------------------

def test_constant_video_gives_constant_scores(vgen):
    frame = np.random.default_rng(0).random((32, 32, 3)).astype(np.float32)
    curve = intent_curve(vgen, np.stack([frame] * 6), "the red block")
    assert [t for t, _ in curve] == list(range(6))
    assert len({s for _, s in curve}) == 1


def test_intent_is_deterministic_and_strided(vgen, rng):
    frames = rng.random((7, 32, 32, 3)).astype(np.float32)
    a = intent_curve(vgen, frames, "the blue ring", stride=3)
    assert [t for t, _ in a] == [0, 3, 6]
    assert a == intent_curve(vgen, frames, "the blue ring", stride=3)


def test_intent_needs_generating_model(vcond, rng):
    with pytest.raises(CapabilityError):
        intent_curve(vcond, rng.random((2, 32, 32, 3)), "the red block")
    with pytest.raises(DataError):
        intent_curve(VoltronModel(toy_config("v-gen"), toy_vocab()), np.zeros((0, 32, 32, 3)), "x")


# -- frozen encoder ---------------------------------------------------------------------------

def test_adaptation_never_touches_encoder(vcond):
    before = {n: p.data.copy() for n, p in vcond.named_parameters()}
    frames, labels = grasp_examples(4, seed=0)
    grasp_adapt(extract(vcond, frames), labels, 64, (4, 4), 8, GraspConfig(epochs=1, batch_size=2, folds=2))
    demos = collect_demos("reach", 2, seed=0)
    bc_adapt(vcond, demos, BcConfig.for_profile("sim", steps=3))
    for name, p in vcond.named_parameters():
        np.testing.assert_array_equal(p.data, before[name], err_msg=name)
