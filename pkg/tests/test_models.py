import math

import numpy as np
import pytest

from holonet import grad_engine as ge
from holonet import models as md
from holonet.errors import ArgumentError, CapacityError, DimensionError
from holonet.group_tasks import Episode, s3_sample_episode, sv_sample_episode
from holonet.tensor_core import RngState


def s3_episode(seed, length=5):
    return s3_sample_episode(RngState(seed), length)


# ---------------------------------------------------------------- noise hook


def test_inject_noise_zero_temperature_identity():
    h = np.array([1.0, 2.0])
    assert md.inject_noise(h, 0.0, 2, RngState(0)) is h


def test_inject_noise_zero_state_fixed_point():
    h = np.zeros(8)
    out = md.inject_noise(h, 3.0, 8, RngState(1))
    assert np.array_equal(out, h)


def test_inject_noise_energy_scaling():
    # E ||eta||^2 = T^2 ||h||^2 under the 1/sqrt(N) normalization
    n, temp = 16, 0.7
    h = RngState(2).generator().standard_normal(n)
    base = np.linalg.norm(h) ** 2
    total = 0.0
    draws = 100_000 // n
    for i in range(draws):
        eta = md.inject_noise(h, temp, n, RngState(3).child(i)) - h
        total += np.linalg.norm(eta) ** 2
    measured = total / draws
    assert abs(measured - temp ** 2 * base) / (temp ** 2 * base) < 0.02


def test_noise_config_validation():
    with pytest.raises(ArgumentError):
        md.NoiseConfig(temperature=-0.1)
    with pytest.raises(ArgumentError):
        md.NoiseConfig(site="everywhere")


# ---------------------------------------------------------------- holonomic


def test_holonomic_zero_generators_identity_flow():
    p = md.init_holonomic(RngState(0), 8, 6, 6)
    p.generators[:] = 0.0
    traj, _ = md.holonomic_forward(p, s3_episode(1, 20))
    assert np.allclose(traj[-1], p.h0, atol=1e-14)


def test_holonomic_isometry_long_sequence():
    p = md.init_holonomic(RngState(4), 32, 6, 6)
    ep = s3_sample_episode(RngState(5), 5000)
    traj, _ = md.holonomic_forward(p, ep)
    norms = np.array([np.linalg.norm(h) for h in traj])
    assert np.all(np.abs(norms / norms[0] - 1.0) < 1e-9)


def test_holonomic_order_sensitivity():
    p = md.init_holonomic(RngState(6), 16, 6, 6)
    ops = p.operators()
    comm = ops[0] @ ops[1] - ops[1] @ ops[0]
    assert np.linalg.norm(comm) > 1e-6
    a = md.holonomic_forward(p, Episode(tokens=(0, 1), target=0, length=2))[0][-1]
    b = md.holonomic_forward(p, Episode(tokens=(1, 0), target=0, length=2))[0][-1]
    assert np.linalg.norm(a - b) > 1e-8


def test_holonomic_noise_renormalizes_to_unit():
    p = md.init_holonomic(RngState(7), 12, 6, 6)
    noise = md.NoiseConfig(temperature=0.8, enabled=True)
    traj, _ = md.holonomic_forward(p, s3_episode(8, 10), noise, RngState(9))
    for h in traj[1:]:
        assert np.linalg.norm(h) == pytest.approx(1.0, abs=1e-12)


def test_holonomic_noise_hook_silent_when_disabled():
    p = md.init_holonomic(RngState(10), 8, 6, 6)
    ep = s3_episode(11)
    _, a = md.holonomic_forward(p, ep, md.NoiseConfig(), None)
    _, b = md.holonomic_forward(p, ep, md.NoiseConfig(), RngState(99))
    assert np.array_equal(a, b)


def test_holonomic_vocabulary_overflow():
    p = md.init_holonomic(RngState(12), 8, 6, 6)
    with pytest.raises(ArgumentError):
        md.holonomic_forward(p, Episode(tokens=(6,), target=0, length=1))


def test_holonomic_noisy_forward_deterministic_per_seed():
    p = md.init_holonomic(RngState(13), 8, 6, 6)
    ep = s3_episode(14)
    noise = md.NoiseConfig(temperature=0.5, enabled=True)
    _, a = md.holonomic_forward(p, ep, noise, RngState(1).child(3))
    _, b = md.holonomic_forward(p, ep, noise, RngState(1).child(3))
    _, c = md.holonomic_forward(p, ep, noise, RngState(1).child(4))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


# ---------------------------------------------------------------- rnn


def test_rnn_zero_weights_zero_trajectory():
    p = md.init_rnn(RngState(15), 8, 6, 6)
    for arr in p.to_dict().values():
        arr[:] = 0.0
    traj, logits = md.rnn_forward(p, s3_episode(16))
    assert all(np.array_equal(h, np.zeros(8)) for h in traj)
    assert np.array_equal(logits, np.zeros(6))


def test_normalized_rnn_unit_sphere_under_noise():
    p = md.init_rnn(RngState(17), 16, 6, 6)
    noise = md.NoiseConfig(temperature=2.0, enabled=True)
    traj, _ = md.rnn_forward(p, s3_episode(18, 10), noise, RngState(19),
                             normalized=True)
    for h in traj[1:]:
        assert np.linalg.norm(h) == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------- transformer


def small_transformer(seed=20, **kw):
    args = dict(d_model=16, n_layers=2, n_heads=2, d_ff=24, vocab=6,
                n_classes=6, pos_mode="learned", max_len=12, pool="final")
    args.update(kw)
    return md.init_transformer(RngState(seed), **args)


def test_transformer_zero_weights_constant_logits():
    p = small_transformer(n_layers=1)
    for arr in p.weights.values():
        arr[:] = 0.0
    a = md.transformer_forward(p, s3_episode(21))
    b = md.transformer_forward(p, s3_episode(22))
    assert np.array_equal(a, b)


def test_transformer_capacity_error_on_learned_positions():
    p = small_transformer()
    long_ep = s3_sample_episode(RngState(23), 13)
    with pytest.raises(CapacityError):
        md.transformer_forward(p, long_ep)


def test_transformer_head_divisibility():
    with pytest.raises(DimensionError):
        small_transformer(d_model=15)


def test_transformer_permutation_invariance_without_positions():
    p = small_transformer(pool="mean")
    p.weights["pos"][:] = 0.0
    ep = Episode(tokens=(0, 1, 2, 3, 4, 5), target=0, length=6)
    perm = Episode(tokens=(5, 3, 1, 0, 4, 2), target=0, length=6)
    a = md.transformer_forward(p, ep)
    b = md.transformer_forward(p, perm)
    assert np.allclose(a, b, atol=1e-10)
    # restoring the positional table breaks the symmetry
    p2 = small_transformer(pool="mean")
    assert not np.allclose(md.transformer_forward(p2, ep),
                           md.transformer_forward(p2, perm), atol=1e-6)


def test_transformer_batch_matches_single():
    p = small_transformer()
    eps = [s3_episode(s, 7) for s in range(6)]
    batch = md.transformer_forward_batch(p, eps)
    for i, e in enumerate(eps):
        assert np.allclose(batch[i], md.transformer_forward(p, e), atol=1e-12)


def test_transformer_residual_noise_deterministic():
    p = small_transformer()
    ep = s3_episode(30, 6)
    noise = md.NoiseConfig(temperature=0.4, enabled=True, site="residual-stream")
    a = md.transformer_forward(p, ep, noise, RngState(7))
    b = md.transformer_forward(p, ep, noise, RngState(7))
    assert np.array_equal(a, b)


# ---------------------------------------------------------------- tape vs numpy


def ce_from_logits(logits, label):
    m = logits.max()
    return float(np.log(np.exp(logits - m).sum()) + m - logits[label])


@pytest.mark.parametrize("kind", md.MODEL_KINDS)
def test_batched_tape_loss_matches_per_episode_reference(kind):
    if kind == md.TRANSFORMER:
        params = small_transformer()
    elif kind == md.HOLONOMIC:
        params = md.init_holonomic(RngState(33), 10, 6, 6)
    else:
        params = md.init_rnn(RngState(34), 10, 6, 6)
    # mixed lengths exercise the grouping path
    eps = [s3_episode(60 + i, 3 + i % 3) for i in range(7)]

    def loss_with(fn):
        tape = ge.Tape()
        leaves = {k: tape.leaf(v) for k, v in params.to_dict().items()}
        loss = fn(tape, leaves)
        tape.backward(loss)
        return float(loss.value), ge.collect_grads(tape, leaves)

    if kind == md.HOLONOMIC:
        ref = lambda t, lv: md.holonomic_tape_loss(t, lv, eps)
        bat = lambda t, lv: md.holonomic_tape_loss_batched(t, lv, eps)
    elif kind == md.TRANSFORMER:
        ref = lambda t, lv: md.transformer_tape_loss(t, lv, eps, params)
        bat = lambda t, lv: md.transformer_tape_loss_batched(t, lv, eps, params)
    else:
        norm = kind == md.NORMALIZED_RNN
        ref = lambda t, lv: md.rnn_tape_loss(t, lv, eps, normalized=norm)
        bat = lambda t, lv: md.rnn_tape_loss_batched(t, lv, eps, normalized=norm)

    ref_loss, ref_grads = loss_with(ref)
    bat_loss, bat_grads = loss_with(bat)
    assert bat_loss == pytest.approx(ref_loss, rel=1e-12)
    for name in ref_grads:
        assert np.allclose(bat_grads[name], ref_grads[name], atol=1e-12), name


@pytest.mark.parametrize("kind", md.MODEL_KINDS)
def test_tape_loss_matches_numpy_forward(kind):
    if kind == md.TRANSFORMER:
        params = small_transformer()
    elif kind == md.HOLONOMIC:
        params = md.init_holonomic(RngState(31), 10, 6, 6)
    else:
        params = md.init_rnn(RngState(32), 10, 6, 6)
    eps = [s3_episode(40 + i, 5) for i in range(3)]
    tape = ge.Tape()
    leaves = {k: tape.leaf(v) for k, v in params.to_dict().items()}
    loss = md.tape_batch_loss(kind, tape, leaves, eps, params)
    expected = np.mean([
        ce_from_logits(md.forward_logits(kind, params, e), e.target) for e in eps])
    assert float(loss.value) == pytest.approx(expected, rel=1e-12)


# ---------------------------------------------------------------- gradient fidelity


def test_holonomic_full_gradient_check():
    params = md.init_holonomic(RngState(50), 6, 6, 6)
    eps = [s3_episode(51, 3)]

    def build(tape, leaves):
        return md.holonomic_tape_loss(tape, leaves, eps)

    err = ge.grad_check(build, ge.ParamStore(params.to_dict()), eps=1e-6)
    assert err < 1e-5


def test_normalized_rnn_gradient_check():
    params = md.init_rnn(RngState(52), 6, 6, 6)
    eps = [s3_episode(53, 4)]

    def build(tape, leaves):
        return md.rnn_tape_loss(tape, leaves, eps, normalized=True)

    err = ge.grad_check(build, ge.ParamStore(params.to_dict()), eps=1e-6)
    assert err < 1e-5


def test_transformer_gradient_check():
    params = small_transformer(d_model=8, n_layers=1, n_heads=2, d_ff=12)
    eps = [s3_episode(54, 4)]

    def build(tape, leaves):
        return md.transformer_tape_loss(tape, leaves, eps, params)

    err = ge.grad_check(build, ge.ParamStore(params.to_dict()), eps=1e-6)
    assert err < 1e-4


# ---------------------------------------------------------------- param counts


def test_param_count_holonomic_binding_config():
    p = md.init_holonomic(RngState(60), 32, 45, 10, n_queries=10)
    total, items = md.param_count(p)
    assert items["generators"] == 45 * 32 * 32 == 46080
    assert total == items["generators"] + items["h0"] + items["readout"]


def test_param_count_recurrent_ratio():
    rnn = md.init_rnn(RngState(61), 128, 6, 6)
    hol = md.init_holonomic(RngState(62), 32, 6, 6)
    _, rnn_items = md.param_count(rnn)
    _, hol_items = md.param_count(hol)
    assert rnn_items["w_rec"] == 16384
    single_generator = hol_items["generators"] // 6
    assert single_generator == 1024
    assert rnn_items["w_rec"] // single_generator == 16


def test_param_count_fig2_transformer_near_3m():
    p = md.init_transformer(RngState(63), d_model=256, n_layers=6, n_heads=8,
                            d_ff=512, vocab=45, n_classes=10, n_queries=10,
                            pos_mode="sinusoidal", pool="mean")
    total, _ = md.param_count(p)
    assert abs(total - 3e6) / 3e6 < 0.10


def test_param_count_zero_layer_transformer():
    p = md.init_transformer(RngState(64), d_model=16, n_layers=0, n_heads=2,
                            d_ff=8, vocab=6, n_classes=6, pos_mode="sinusoidal")
    total, items = md.param_count(p)
    assert set(items) == {"embed", "ln_f_g", "ln_f_b", "readout"}
    assert total == 6 * 16 + 16 + 16 + 6 * 16
