import math
import struct

import numpy as np
import pytest

from pcgssl.errors import (CheckpointError, DegenerateEmbedding, NonFiniteGradient, ShapeMismatch,
                           StepOutOfRange)
from pcgssl.nncore import (LARS, Adam, BackboneConfig, ParameterSet, PieceLock, ScheduleConfig, Tensor, adam_step,
                           backbone_forward, conv1d, cross_entropy, dense_forward, global_max_pool, grad_check,
                           init_backbone, init_dense, init_projection, lars_step, linear, load_checkpoint, lr_at,
                           max_pool1d, nt_xent, projection_forward, relu, save_checkpoint)
from pcgssl.nncore import tensor as T

SMALL = BackboneConfig(n_blocks=2, channels=[3, 4], kernel=5, pool=2, input_len=40, embed_dim=4)


def params_of(**arrays):
    ps = ParameterSet()
    for k, v in arrays.items():
        ps[k] = np.asarray(v, dtype=np.float64)
    return ps


# -- forward examples -----------------------------------------------------------

def test_conv_identity_kernel(rng):
    x = rng.standard_normal((2, 1, 9))
    y = conv1d(Tensor(x), Tensor([[[1.0]]]), Tensor([0.0]))
    np.testing.assert_array_equal(y.data, x)


def test_conv_centered_average():
    # k=3 is centred: output[i] sees x[i-1], x[i], x[i+1]
    y = conv1d(Tensor([[[1.0, 3.0, 5.0]]]), Tensor([[[0.5, 0.5, 0.0]]]), Tensor([0.0]))
    assert y.data[0, 0, 1] == 2.0


def test_conv_zero_input_gives_bias():
    y = conv1d(Tensor(np.zeros((3, 2, 7))), Tensor(np.ones((4, 2, 5))), Tensor([1.0, 2.0, 3.0, 4.0]))
    np.testing.assert_array_equal(y.data, np.broadcast_to(np.array([1.0, 2.0, 3.0, 4.0])[None, :, None], (3, 4, 7)))


def test_conv_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        conv1d(Tensor(np.zeros((1, 2, 7))), Tensor(np.zeros((4, 3, 5))), Tensor(np.zeros(4)))


def test_default_backbone_lengths_and_shape(rng):
    cfg = BackboneConfig()
    assert cfg.time_lengths() == [10000, 2500, 625, 156, 39, 9]
    params = init_backbone(cfg, rng, np.float64)
    out = backbone_forward(Tensor(rng.standard_normal((2, 1, 10000))), params, cfg)
    assert out.shape == (2, 128)


def test_backbone_zero_input_zero_output(rng):
    out = backbone_forward(Tensor(np.zeros((1, 1, 40))), init_backbone(SMALL, rng, np.float64), SMALL)
    np.testing.assert_array_equal(out.data, 0.0)


def test_backbone_rejects_wrong_length(rng):
    with pytest.raises(ShapeMismatch):
        backbone_forward(Tensor(np.zeros((1, 1, 41))), init_backbone(SMALL, rng), SMALL)


def test_backbone_config_validation():
    with pytest.raises(ValueError):
        BackboneConfig(n_blocks=3)
    with pytest.raises(ValueError):
        BackboneConfig(input_len=100)


# -- gradient checks per layer --------------------------------------------------

def test_grad_check_sum_of_squares(rng):
    ps = params_of(w=rng.standard_normal(7))
    assert grad_check(lambda p: T.sum_all(T.mul(p["w"], p["w"])), ps) < 1e-7


def test_constant_function_zero_gradient(rng):
    ps = params_of(w=rng.standard_normal(3))
    out = T.sum_all(T.mul(Tensor(np.zeros(3)), ps["w"]))
    out.backward()
    np.testing.assert_array_equal(ps["w"].grad, 0.0)
    assert grad_check(lambda p: T.sum_all(T.mul(Tensor(np.zeros(3)), p["w"])), ps) == 0.0


@pytest.mark.filterwarnings("ignore:divide by zero")
def test_grad_check_detects_nonfinite():
    ps = params_of(w=[0.0, 1.0])
    with pytest.raises(NonFiniteGradient):
        grad_check(lambda p: T.sum_all(T.power(p["w"], 0.5)), ps)


def weighted(y, rng):
    """Scalar probe: random linear functional of ``y`` so every output coordinate matters."""
    return T.sum_all(T.mul(y, Tensor(rng.standard_normal(y.shape))))


LAYERS = {
    "conv1d": lambda p, x: conv1d(x, p["w"], p["b"]),
    "linear": lambda p, x: linear(p["h"], p["lw"], p["lb"]),
    "relu": lambda p, x: relu(conv1d(x, p["w"], p["b"])),
    "maxpool": lambda p, x: max_pool1d(conv1d(x, p["w"], p["b"]), 3),
    "globalmax": lambda p, x: global_max_pool(conv1d(x, p["w"], p["b"])),
}


@pytest.mark.parametrize("name", sorted(LAYERS))
def test_layer_gradients(rng, name):
    x = Tensor(rng.standard_normal((3, 2, 13)), requires_grad=True)
    ps = params_of(w=rng.standard_normal((4, 2, 5)), b=rng.standard_normal(4),
                   lw=rng.standard_normal((5, 13)), lb=rng.standard_normal(5), h=rng.standard_normal((3, 13)))
    ps["x"] = x
    probe_rng = np.random.default_rng(5)
    probe = Tensor(probe_rng.standard_normal(LAYERS[name](ps, x).shape))
    f = lambda p: T.sum_all(T.mul(LAYERS[name](p, p["x"]), probe))
    assert grad_check(f, ps) < 1e-4


def test_cross_entropy_gradient(rng):
    ps = params_of(logits=rng.standard_normal((6, 3)))
    labels = rng.integers(0, 3, 6)
    assert grad_check(lambda p: cross_entropy(p["logits"], labels), ps) < 1e-6


def test_cross_entropy_value(rng):
    logits = rng.standard_normal((4, 3))
    labels = np.array([0, 2, 1, 1])
    expect = np.mean([-math.log(math.exp(r[k]) / sum(math.exp(v) for v in r)) for r, k in zip(logits, labels)])
    assert float(cross_entropy(Tensor(logits), labels).data) == pytest.approx(expect, rel=1e-12)


def test_nt_xent_gradient(rng):
    ps = params_of(z=rng.standard_normal((6, 5)))
    assert grad_check(lambda p: nt_xent(p["z"], 0.1), ps) < 1e-4


def test_full_small_pipeline_gradient(rng):
    ps = init_backbone(SMALL, rng, np.float64)
    init_projection(ps, SMALL, rng, np.float64)
    x = rng.standard_normal((4, 1, SMALL.input_len))
    f = lambda p: nt_xent(projection_forward(backbone_forward(Tensor(x), p, SMALL), p), 0.5)
    assert grad_check(f, ps) < 1e-4


def test_dense_stack_gradient(rng):
    ps = init_dense(ParameterSet(), "head.t.", [6, 5, 4, 3], rng, np.float64)
    x = Tensor(rng.standard_normal((7, 6)))
    labels = rng.integers(0, 3, 7)
    assert grad_check(lambda p: cross_entropy(dense_forward(x, p, "head.t."), labels), ps) < 1e-4


def test_piece_lock_replay_matches_record_at_same_point(rng):
    ps = init_backbone(SMALL, rng, np.float64)
    x = Tensor(rng.standard_normal((3, 1, SMALL.input_len)))
    lock = PieceLock()
    with lock.record():
        a = backbone_forward(x, ps, SMALL).data
    with lock.replay():
        b = backbone_forward(x, ps, SMALL).data
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(lock.choices[0], lock.choices[0][::-1])  # choices are real masks


def test_piece_lock_extends_the_recorded_piece():
    # relu(w) at w = 0.5: replayed across the kink it stays the identity piece
    ps = params_of(w=[0.5])
    lock = PieceLock()
    with lock.record():
        T.sum_all(relu(ps["w"]))
    ps["w"].data[0] = -2.0
    with lock.replay():
        assert float(T.sum_all(relu(ps["w"])).data) == -2.0
    assert float(T.sum_all(relu(ps["w"])).data) == 0.0


def test_piece_lock_rejects_a_different_graph():
    ps = params_of(w=[0.5, -1.0])
    lock = PieceLock()
    with lock.record():
        relu(ps["w"])
    with pytest.raises(RuntimeError):
        with lock.replay():
            relu(relu(ps["w"]))
    with pytest.raises(RuntimeError):
        with lock.replay():
            pass
    with lock.record():
        with pytest.raises(RuntimeError):
            with lock.replay():
                pass


def test_piecewise_grad_check_near_a_kink():
    # kink 1e-6 from the point: plain central differences at eps=1e-4 straddle it
    ps = params_of(w=[1e-6, 0.3])
    f = lambda p: T.sum_all(relu(p["w"]))
    assert grad_check(f, ps, eps=1e-4) > 0.1
    assert grad_check(f, ps, eps=1e-4, piecewise=True) < 1e-10


def test_shared_subgraph_accumulates(rng):
    # w used twice: d/dw (w*w + w) = 2w + 1
    ps = params_of(w=rng.standard_normal(4))
    T.sum_all(T.add(T.mul(ps["w"], ps["w"]), ps["w"])).backward()
    np.testing.assert_allclose(ps["w"].grad, 2 * ps["w"].data + 1)


def test_nt_xent_degenerate_row():
    with pytest.raises(DegenerateEmbedding):
        nt_xent(Tensor(np.array([[1.0, 0.0], [0.0, 0.0]])), 0.1)
    with pytest.raises(ShapeMismatch):
        nt_xent(Tensor(np.ones((3, 2))), 0.1)


# -- optimizers -----------------------------------------------------------------

def test_adam_first_step_closed_form():
    ps = params_of(w=[0.0])
    adam_step(ps, {"w": np.array([1.0])}, t=1)
    assert ps["w"].data[0] == pytest.approx(-1e-4 / (1 + 1e-8), abs=1e-9)


def test_adam_oracle_sequence(rng):
    # textbook recursion, written out independently
    w = rng.standard_normal(5)
    grads = rng.standard_normal((6, 5))
    ps = params_of(w=w.copy())
    opt = Adam(lr=0.01)
    m = np.zeros(5)
    v = np.zeros(5)
    for t, g in enumerate(grads, start=1):
        opt.step(ps, {"w": g})
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g ** 2
        w = w - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(ps["w"].data, w, rtol=1e-12)


def test_adam_zero_gradient_unchanged(rng):
    ps = params_of(w=rng.standard_normal(4))
    before = ps["w"].data.copy()
    adam_step(ps, {"w": np.zeros(4)}, t=1)
    np.testing.assert_array_equal(ps["w"].data, before)


def test_lars_hand_example():
    # the hand computation takes eps = 0; the default eps shifts eta by 1e-10 relative
    ps = params_of(w=[3.0, 4.0])
    lars_step(ps, {"w": np.array([0.0, 10.0])}, lr=0.1, momentum=0.0, eps=0.0)
    assert ps["w"].data.tolist() == [3.0, 3.5]
    ps = params_of(w=[3.0, 4.0])
    lars_step(ps, {"w": np.array([0.0, 10.0])}, lr=0.1, momentum=0.0)
    np.testing.assert_allclose(ps["w"].data, [3.0, 3.5], rtol=0, atol=1e-9)


def test_lars_zero_grad_no_change():
    ps = params_of(w=[3.0, 4.0])
    lars_step(ps, {"w": np.zeros(2)}, lr=0.1)
    assert ps["w"].data.tolist() == [3.0, 4.0]


def test_lars_trust_ratio_scales_with_w(rng):
    opt = LARS()
    w, g = rng.standard_normal(10), rng.standard_normal(10)
    for c in (0.5, 2.0, 10.0):
        assert opt.trust_ratio(c * w, g) / opt.trust_ratio(w, g) == pytest.approx(c, rel=1e-6)


def test_lars_bias_excluded():
    opt = LARS()
    assert opt.trust_ratio(np.array([3.0, 4.0]), np.array([0.0, 10.0]), "block1.conv.bias") == 1.0


def test_lars_momentum_oracle(rng):
    w = rng.standard_normal((3, 4))
    grads = rng.standard_normal((5, 3, 4))
    ps = params_of(**{"block1.conv.weight": w.copy()})
    opt = LARS(momentum=0.9, weight_decay=1e-3)
    v = np.zeros_like(w)
    for g in grads:
        opt.step(ps, 0.05, {"block1.conv.weight": g})
        eta = np.linalg.norm(w) / (np.linalg.norm(g) + 1e-3 * np.linalg.norm(w) + 1e-9)
        v = 0.9 * v + eta * 0.05 * (g + 1e-3 * w)
        w = w - v
    np.testing.assert_allclose(ps["block1.conv.weight"].data, w, rtol=1e-12)


@pytest.mark.parametrize("make", [lambda: Adam(lr=0.0), lambda: LARS()])
def test_lr_zero_bit_identical(rng, make):
    ps = init_backbone(SMALL, rng, np.float64)
    before = ps.snapshot()
    grads = {p: rng.standard_normal(t.shape) for p, t in ps.items()}
    opt = make()
    if isinstance(opt, LARS):
        opt.step(ps, 0.0, grads)
    else:
        opt.step(ps, grads)
    for p, arr in before.items():
        assert ps[p].data.tobytes() == arr.tobytes()


@pytest.mark.parametrize("kind", ["adam", "lars"])
def test_frozen_paths_survive_100_steps(rng, kind):
    ps = init_backbone(SMALL, rng, np.float64)
    init_projection(ps, SMALL, rng, np.float64)
    ps.freeze(ps.paths("block"))
    before = ps.snapshot()
    opt = Adam(lr=0.1) if kind == "adam" else LARS()
    for _ in range(100):
        grads = {p: rng.standard_normal(t.shape) for p, t in ps.items()}
        opt.step(ps, grads) if kind == "adam" else opt.step(ps, 0.1, grads)
    for p in ps.paths("block"):
        assert ps[p].data.tobytes() == before[p].tobytes()
    assert any(not np.array_equal(ps[p].data, before[p]) for p in ps.paths("proj."))


# -- schedule -------------------------------------------------------------------

def test_schedule_endpoints():
    cfg = ScheduleConfig()
    assert abs(lr_at(cfg.warmup_steps - 1, cfg) - 0.1) <= 1e-12
    assert abs(lr_at(cfg.total_steps - 1, cfg) - 0.001) <= 1e-12
    assert abs(lr_at(0, cfg) - 0.02) <= 1e-12
    mid = cfg.warmup_steps + (cfg.total_steps - 1 - cfg.warmup_steps) // 2
    assert abs(lr_at(mid, cfg) - 0.0505) <= 1e-12


def test_schedule_monotone_with_steps_per_epoch():
    cfg = ScheduleConfig(steps_per_epoch=7)
    lrs = [lr_at(s, cfg) for s in range(cfg.total_steps)]
    warm = cfg.warmup_steps
    assert all(a < b for a, b in zip(lrs[:warm], lrs[1:warm]))
    assert all(a >= b for a, b in zip(lrs[warm - 1:], lrs[warm:]))
    assert lrs[warm - 1] == pytest.approx(0.1)
    assert lrs[-1] == pytest.approx(0.001, abs=1e-15)


@pytest.mark.parametrize("step", [-1, 50, 1000])
def test_schedule_out_of_range(step):
    with pytest.raises(StepOutOfRange):
        lr_at(step, ScheduleConfig())


# -- checkpoints ----------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    ps = init_backbone(SMALL, rng, np.float32)
    init_projection(ps, SMALL, rng, np.float64)
    ps.freeze(ps.paths("block"))
    save_checkpoint(tmp_path / "m.ckpt", ps, SMALL, extra={"note": "x"})
    loaded, cfg, extra = load_checkpoint(tmp_path / "m.ckpt")
    assert cfg == SMALL and extra == {"note": "x"}
    assert loaded.frozen_paths == ps.frozen_paths
    for p, t in ps.items():
        assert loaded[p].dtype == t.dtype
        np.testing.assert_array_equal(loaded[p].data, t.data)


def test_checkpoint_layout_is_documented(tmp_path):
    ps = params_of(**{"a": [1.5, -2.0]})
    save_checkpoint(tmp_path / "a.ckpt", ps)
    raw = (tmp_path / "a.ckpt").read_bytes()
    assert raw[:8] == b"PCGSSLCK"
    version, meta_len = struct.unpack_from("<II", raw, 8)
    assert version == 1
    pos = 16 + meta_len
    (n,) = struct.unpack_from("<I", raw, pos)
    (name_len,) = struct.unpack_from("<H", raw, pos + 4)
    pos += 6
    assert n == 1 and raw[pos:pos + name_len] == b"a"
    pos += name_len
    assert raw[pos:pos + 2] == b"f8" and raw[pos + 2] == 1
    assert struct.unpack_from("<Q", raw, pos + 3) == (2,)
    assert struct.unpack_from("<2d", raw, pos + 11) == (1.5, -2.0)


def test_checkpoint_rejects_bad_files(tmp_path, rng):
    (tmp_path / "junk").write_bytes(b"hello world, not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "junk")
    ps = init_backbone(SMALL, rng)
    save_checkpoint(tmp_path / "ok.ckpt", ps, SMALL)
    raw = (tmp_path / "ok.ckpt").read_bytes()
    (tmp_path / "cut.ckpt").write_bytes(raw[:-3])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "cut.ckpt")
    wrong = BackboneConfig(n_blocks=2, channels=[3, 5], kernel=5, pool=2, input_len=40)
    save_checkpoint(tmp_path / "bad.ckpt", ps, wrong)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.ckpt")
