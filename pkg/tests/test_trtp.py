import json
import math

import numpy as np
import pytest

from riskmpcc.errors import InvalidInputError, TrainingDivergedError
from riskmpcc.lane_graph import load_map
from riskmpcc.prediction import HistoryTrack
from riskmpcc.sim.scenario import SCENARIO_DIR
from riskmpcc.trtp.data import GeneratorConfig, from_frame, generate, split, to_frame
from riskmpcc.trtp.network import (Dims, NetParams, TrainConfig, attention, dataset_loss, decode, encode, forward,
                                   gru_encode, load_checkpoint, loss, loss_and_grad, save_checkpoint, train_toy)
from riskmpcc.trtp.predictor import TRTPPredictor, resample_history

TINY = Dims(hidden=8, embed=4, mlp=8, horizon=12)


@pytest.fixture(scope="module")
def samples():
    return generate(GeneratorConfig(n_samples=12, seed=1))


def gru_weights(H, E, fill=0.0):
    w = {}
    for g in "zrn":
        w[f"W{g}"] = np.full((H, E), fill)
        w[f"U{g}"] = np.full((H, H), fill)
        w[f"b{g}"] = np.full(H, fill)
    return w


def numeric_gradient_check(p, sample, h=1e-5):
    """Worst per-tensor relative error ||analytic - fd|| / ||fd|| over every parameter tensor.

    Entries of size ~1e-6 sit at the central-difference roundoff floor
    (eps * loss / h), so the comparison is made norm-wise per tensor.
    """
    _, grads = loss_and_grad(p, sample)
    worst = 0.0
    for name, arr in p.tensors.items():
        fd = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            lp = loss_and_grad(p, sample)[0][2]
            arr[idx] = old - h
            lm = loss_and_grad(p, sample)[0][2]
            arr[idx] = old
            fd[idx] = (lp - lm) / (2 * h)
        worst = max(worst, np.linalg.norm(grads[name] - fd) / max(np.linalg.norm(fd), 1e-12))
    return worst


# -- GRU ----------------------------------------------------------------------------

def test_gru_all_zero_weights_stays_zero():
    h = gru_encode(gru_weights(5, 3), np.random.default_rng(0).normal(size=(7, 3)))
    assert np.array_equal(h, np.zeros(5))


def test_gru_hand_example():
    # z = sigmoid(0) = 0.5 and n = tanh(x) when only Wn = 1
    w = gru_weights(1, 1)
    w["Wn"] = np.ones((1, 1))
    h1 = gru_encode(w, [[0.5]])
    h2 = gru_encode(w, [[0.5], [0.5]])
    assert h1[0] == pytest.approx(0.5 * math.tanh(0.5), abs=1e-15)
    assert h2[0] == pytest.approx(0.75 * math.tanh(0.5), abs=1e-15)


def test_gru_is_deterministic_and_checks_width():
    rng = np.random.default_rng(1)
    w = {k: rng.normal(size=v.shape) for k, v in gru_weights(6, 3).items()}
    seq = rng.normal(size=(4, 3))
    assert np.array_equal(gru_encode(w, seq), gru_encode(w, seq))
    with pytest.raises(InvalidInputError):
        gru_encode(w, rng.normal(size=(4, 2)))


# -- attention ------------------------------------------------------------------------

def test_attention_single_key():
    out, w = attention([1.0, 2.0], [[0.3, -1.0]], [[5.0, 6.0, 7.0]])
    assert w.tolist() == [1.0] and out.tolist() == [5.0, 6.0, 7.0]


def test_attention_identical_keys():
    _, w = attention([1.0, 2.0, 3.0, 4.0], [[1.0, 1, 1, 1], [1.0, 1, 1, 1]], [[0.0], [1.0]])
    assert w == pytest.approx([0.5, 0.5], abs=1e-15)


def test_attention_hand_example():
    # scores: q.k1 / 2 = 0.5, q.k2 / 2 = 1.0
    q = [1.0, 0.0, 1.0, 0.0]
    keys = [[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 2.0, 0.0]]
    values = [[1.0, 0.0], [0.0, 1.0]]
    out, w = attention(q, keys, values)
    w1 = math.exp(0.5) / (math.exp(0.5) + math.exp(1.0))
    assert w == pytest.approx([w1, 1 - w1], abs=1e-9)
    assert out == pytest.approx([w1, 1 - w1], abs=1e-9)
    with pytest.raises(InvalidInputError):
        attention(q, keys, values[:1])


# -- decode ---------------------------------------------------------------------------

def test_decode_shapes_and_simplex():
    p = NetParams.init(TINY, seed=0)
    rng = np.random.default_rng(2)
    traj, probs, _ = decode(p, rng.normal(size=8), list(rng.normal(size=(5, 8))))
    assert traj.shape == (5, 12, 3) and probs.shape == (5,)
    assert abs(probs.sum() - 1.0) < 1e-9 and np.all(probs >= 0)
    with pytest.raises(InvalidInputError):
        decode(p, rng.normal(size=8), [])


def test_identical_paths_give_uniform_probabilities():
    p = NetParams.init(TINY, seed=0)
    e = np.random.default_rng(3).normal(size=8)
    _, probs, _ = decode(p, e, [e * 0.3] * 4)
    assert probs == pytest.approx([0.25] * 4, abs=1e-15)


def test_zero_mlp_weights_return_the_bias():
    p = NetParams.init(TINY, seed=0)
    p.tensors["mlp.W2"][:] = 0.0
    traj, _, _ = decode(p, np.ones(8), [np.ones(8), -np.ones(8)])
    assert np.array_equal(traj[0], p["mlp.b2"].reshape(12, 3))
    assert np.array_equal(traj[1], p["mlp.b2"].reshape(12, 3))


# -- loss ---------------------------------------------------------------------------

def test_loss_perfect():
    gt = np.random.default_rng(4).normal(size=(12, 2))
    pred = np.concatenate([gt, np.zeros((12, 1))], axis=1)[None]
    assert loss(pred, [1.0], gt, 0)[:3] == (0.0, 0.0, 0.0)


def test_loss_unit_displacement():
    gt = np.zeros((12, 2))
    pred = np.zeros((1, 12, 3))
    pred[0, :, 0] = 1.0
    l_traj, l_pro, total, _ = loss(pred, [1.0], gt, 0, alpha=0.5, beta=1.0)
    assert (l_traj, l_pro, total) == (12.0, 0.0, 6.0)


def test_loss_half_probability():
    gt = np.zeros((12, 2))
    pred = np.zeros((2, 12, 3))
    _, l_pro, total, _ = loss(pred, [0.5, 0.5], gt, 1)
    assert total == pytest.approx(math.log(2), abs=1e-15) and l_pro == total


def test_loss_clamps_zero_probability():
    _, l_pro, _, clamped = loss(np.zeros((2, 12, 3)), [1.0, 0.0], np.zeros((12, 2)), 1)
    assert clamped and l_pro == pytest.approx(-math.log(1e-12))
    with pytest.raises(InvalidInputError):
        loss(np.zeros((2, 12, 3)), [1.0, 0.0], np.zeros((12, 2)), 2)


def test_loss_non_negative_on_data(samples):
    p = NetParams.init(TINY, seed=5)
    for s in samples:
        traj, probs, _, _ = forward(p, s.history, s.neighbors, s.paths)
        l_traj, l_pro, total, _ = loss(traj, probs, s.gt, s.gt_index)
        assert l_traj >= 0 and l_pro >= 0 and total >= 0


# -- gradients and training -------------------------------------------------------------

def test_full_gradient_check_tiny_net(samples):
    busiest = sorted(samples, key=lambda s: (-len(s.neighbors), -len(s.paths)))[:2]
    for seed, sample in enumerate(busiest):
        assert numeric_gradient_check(NetParams.init(TINY, seed=seed), sample) < 1e-4


def test_neighbor_order_does_not_matter(samples):
    s = max(samples, key=lambda s: len(s.neighbors))
    assert len(s.neighbors) >= 2
    p = NetParams.init(Dims(), seed=2)
    a = encode(p, s.history, s.neighbors, s.paths)
    b = encode(p, s.history, s.neighbors[::-1], s.paths)
    assert np.max(np.abs(a.e_updated - b.e_updated)) <= 1e-12


def test_single_sample_overfit(samples):
    p0 = NetParams.init(Dims(), seed=0)
    s = samples[0]
    before = dataset_loss(p0, [s])
    trained, curve = train_toy([s], p0, TrainConfig(steps=300, learning_rate=3e-3))
    assert dataset_loss(trained, [s]) < 0.1 * before
    assert len(curve) == 300


def test_zero_learning_rate_changes_nothing(samples):
    p0 = NetParams.init(TINY, seed=0)
    for opt in ("adam", "sgd"):
        trained, _ = train_toy(samples[:3], p0, TrainConfig(steps=5, learning_rate=0.0, optimizer=opt))
        assert trained.equals(p0)


def test_training_lowers_held_out_loss():
    data = generate(GeneratorConfig(n_samples=40, seed=4))
    train, held = split(data, 0.25)
    p0 = NetParams.init(Dims(hidden=16, embed=8, mlp=32), seed=0)
    trained, _ = train_toy(train, p0, TrainConfig(steps=150, learning_rate=5e-3))
    assert dataset_loss(trained, held) < dataset_loss(p0, held)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported(samples):
    p0 = NetParams.init(TINY, seed=0)
    p0.tensors["mlp.b2"][:] = 1e308
    with pytest.raises(TrainingDivergedError):
        train_toy(samples[:2], p0, TrainConfig(steps=2))


def test_training_is_deterministic(samples):
    p0 = NetParams.init(TINY, seed=0)
    a, _ = train_toy(samples, p0, TrainConfig(steps=10))
    b, _ = train_toy(samples, p0, TrainConfig(steps=10))
    assert a.equals(b)


# -- parameters and checkpoints ----------------------------------------------------------

def test_params_reject_bad_shapes():
    p = NetParams.init(TINY)
    bad = dict(p.tensors)
    bad["mlp.b1"] = np.zeros(3)
    with pytest.raises(InvalidInputError):
        NetParams(TINY, bad)
    missing = dict(p.tensors)
    del missing["att_prob.Wk"]
    with pytest.raises(InvalidInputError):
        NetParams(TINY, missing)


def test_checkpoint_round_trip(tmp_path):
    p = NetParams.init(TINY, seed=9)
    save_checkpoint(p, tmp_path / "c.json")
    assert load_checkpoint(tmp_path / "c.json").equals(p)


def test_checkpoint_header_is_validated(tmp_path):
    p = NetParams.init(TINY, seed=9)
    save_checkpoint(p, tmp_path / "c.json")
    doc = json.loads((tmp_path / "c.json").read_text())
    doc["shapes"]["mlp.W1"] = [1, 1]
    (tmp_path / "bad.json").write_text(json.dumps(doc))
    with pytest.raises(InvalidInputError):
        load_checkpoint(tmp_path / "bad.json")
    doc = json.loads((tmp_path / "c.json").read_text())
    doc["tensors"]["mlp.b1"] = doc["tensors"]["mlp.b1"][:-1]
    (tmp_path / "short.json").write_text(json.dumps(doc))
    with pytest.raises(InvalidInputError):
        load_checkpoint(tmp_path / "short.json")
    with pytest.raises(InvalidInputError):
        load_checkpoint(tmp_path / "absent.json")


# -- data -------------------------------------------------------------------------------

def test_frame_round_trip():
    rng = np.random.default_rng(6)
    xy = rng.normal(size=(10, 2)) * 20
    origin = (3.0, -4.0, 0.7)
    assert np.allclose(from_frame(to_frame(xy, origin), origin), xy)


def test_generator_is_deterministic_and_labels_the_gt_path():
    a = generate(GeneratorConfig(n_samples=6, seed=3))
    b = generate(GeneratorConfig(n_samples=6, seed=3))
    graph = load_map(SCENARIO_DIR / "left_turn_map.json")
    for s, t in zip(a, b):
        assert np.array_equal(s.history, t.history) and np.array_equal(s.gt, t.gt)
        assert s.gt_trajectory.horizon_steps == 12
        # the labelled path runs through the piece holding the final gt position
        end = s.gt_trajectory.poses[-1, :2]
        star = s.path_set[s.gt_index]
        dists = [np.min(np.hypot(*(graph[pid].xy - end).T)) for pid in star.pieces]
        assert min(dists) < 3.0


# -- closed-loop predictor -------------------------------------------------------------------

def test_resample_history_picks_two_hertz_samples():
    t = np.arange(0.0, 3.01, 0.05)
    samples = np.column_stack([t, t, np.zeros_like(t), np.zeros_like(t), np.ones_like(t), np.zeros((len(t), 2))])
    out = resample_history(HistoryTrack(samples))
    assert out.samples[:, 0] == pytest.approx([1.0, 1.5, 2.0, 2.5, 3.0])


def test_trtp_predictor_emits_one_trajectory_per_path(samples, tmp_path):
    p = NetParams.init(Dims(), seed=0)
    save_checkpoint(p, tmp_path / "c.json")
    pred = TRTPPredictor.from_options(checkpoint=str(tmp_path / "c.json"))
    graph = load_map(SCENARIO_DIR / "left_turn_map.json")
    s = samples[0]
    ps = pred(s.target_history, graph, s.neighbor_histories)
    assert len(ps) == len(s.path_set)
    assert abs(ps.probabilities.sum() - 1.0) < 1e-9
    assert all(t.horizon_steps == 12 and t.dt_pred == 0.5 for t in ps.trajectories)
    far = HistoryTrack(np.array([[0.0, 500.0, 500.0, 0.0, 3.0, 0.0, 0.0]]))
    assert pred(far, graph).flags == ("fallback:no-paths",)
