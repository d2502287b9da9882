import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nmgkit.filters import band_indicator, make_mask
from nmgkit.nmg import CycleTrace, NeuralHierarchy, ZeroSmoother, _cycle, exact_band_smoothers, nmg_cycle
from nmgkit.problems import ProblemSpec, build_problem
from nmgkit.training import (
    Batch,
    TrainConfig,
    TrainingError,
    TrainLog,
    _fine_masks,
    combined_loss,
    generate_batch,
    init_smoothers,
    levelwise_loss,
    levelwise_losses,
    train,
)
from nmgkit.transfer import build_hierarchy


def tiny(n=16, L=3, alpha=1e-2, filtered=True, seed=0, channels=4, layers=2):
    op = build_problem(ProblemSpec(n=n, alpha=alpha))
    base = build_hierarchy(op, L)
    cfg = TrainConfig(L=L, channels=channels, layers=layers)
    sm = init_smoothers(base, cfg, np.random.default_rng(seed))
    return op, NeuralHierarchy(base, sm, filtered=filtered)


def zero_nh(op, L):
    base = build_hierarchy(op, L)
    return NeuralHierarchy(base, {l: ZeroSmoother(base.shape(l)) for l in range(1, L)})


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), cap=st.integers(1, 4))
def test_rollout_keeps_pairs_consistent(seed, cap):
    op, nh = tiny(seed=seed % 5)
    batch = generate_batch(op, nh, 6, cap, np.random.default_rng(seed))
    assert np.all((1 <= batch.steps) & (batch.steps <= cap))
    for i in range(batch.count):
        y = batch.y[i]
        assert np.linalg.norm(y - op(batch.x[i])) <= 1e-10 * max(1.0, np.linalg.norm(y))


def test_rollout_single_step_is_one_cycle():
    op, nh = tiny()
    rng = np.random.default_rng(3)
    batch = generate_batch(op, nh, 4, 1, rng)
    x0 = np.random.default_rng(3).standard_normal((4, 16))
    np.testing.assert_allclose(batch.x, x0 - nmg_cycle(nh, np.zeros_like(x0), op(x0)), atol=1e-12)
    assert np.all(batch.steps == 1)


def test_rollout_with_zero_smoothers_leaves_high_frequency_error():
    op = build_problem(ProblemSpec(n=64, alpha=1e-3))
    nh = zero_nh(op, 4)
    x0 = np.random.default_rng(0).standard_normal((8, 64))
    batch = generate_batch(op, nh, 8, 3, np.random.default_rng(0))

    def fractions(x):
        spec = np.abs(np.fft.fftshift(np.fft.fft(x), axes=-1)) ** 2
        return [spec[:, band_indicator(l, 4, (64,))].sum() / spec.sum() for l in (1, 4)]

    high0, low0 = fractions(x0)
    high1, low1 = fractions(batch.x)
    assert low1 < 0.2 * low0 and high1 > high0
    # a pure coarse correction is a projection, so more steps change nothing
    once = generate_batch(op, nh, 8, 1, np.random.default_rng(0))
    np.testing.assert_allclose(batch.x, once.x, atol=1e-12)


def test_levelwise_loss_vanishes_for_exact_solve_hook():
    op = build_problem(ProblemSpec(n=32, alpha=1e-3))
    base = build_hierarchy(op, 3)

    class Solve:
        shape = (32,)

        def __call__(self, u):
            return base.solve(1, u)

    nh = NeuralHierarchy(base, {1: Solve(), 2: ZeroSmoother(base.shape(2))})
    x = np.random.default_rng(0).standard_normal((3, 32))
    _, trace = traced_cycle_free(nh, op(x))
    masks = _fine_masks(nh)
    r = levelwise_loss(1, x, trace.levels[0], nh, masks[1], grads=False)
    assert r.loss <= 1e-20 * np.sum(masks[1] * np.abs(np.fft.fft(x)) ** 2)


def traced_cycle_free(nh, y):
    trace = CycleTrace(keep_cache=False)
    out = _cycle(nh, np.zeros_like(y), y, 1, nh.L, trace)
    return out, trace


def test_levelwise_loss_with_zero_smoothers_is_masked_error_energy():
    op = build_problem(ProblemSpec(n=32, alpha=1e-3))
    nh = zero_nh(op, 3)
    x = np.random.default_rng(1).standard_normal((5, 32))
    _, trace = traced_cycle_free(nh, op(x))
    masks = _fine_masks(nh)
    rec = trace.levels[0]
    r = levelwise_loss(1, x, rec, nh, masks[1], grads=False)
    F = np.exp(-2j * np.pi * np.outer(np.arange(32), np.arange(32)) / 32)
    m = make_mask(1, 3, (32,), "fine").natural
    expected = np.mean([np.sum(np.abs(m * (F @ xi)) ** 2) for xi in x])
    assert abs(r.loss - expected) <= 1e-12 * expected
    # every bin obeys F_j m_j^2 <= loss
    assert np.all(r.mask_sq * r.per_bin <= r.loss * (1 + 1e-12))


def _fd_check(loss_fn, smoothers, grads, level, names, rng, eps=1e-6, picks=3):
    for name in names:
        p = smoothers[level].params[name]
        for _ in range(picks):
            idx = tuple(rng.integers(0, s) for s in p.shape)
            old = p[idx]
            p[idx] = old + eps
            up = loss_fn()
            p[idx] = old - eps
            dn = loss_fn()
            p[idx] = old
            fd = (up - dn) / (2 * eps)
            an = grads[name][idx]
            assert abs(fd - an) <= 1e-5 * max(1.0, abs(fd)), (level, name, idx, fd, an)


def test_levelwise_gradients_match_finite_differences():
    op, nh = tiny(seed=2)
    batch = generate_batch(op, nh, 3, 2, np.random.default_rng(0))
    masks = _fine_masks(nh)
    res = levelwise_losses(batch, nh, masks)
    rng = np.random.default_rng(1)
    for level in (1, 2):
        names = ["lift.w", "proj.w", "layer0.R", "layer1.W"]
        names = [k for k in names if k in nh.smoothers[level].params] or list(nh.smoothers[level].params)[:3]
        _fd_check(lambda: levelwise_losses(batch, nh, masks, grads=False)[level].loss,
                  nh.smoothers, res[level].grads, level, names, rng)


def test_levelwise_gradients_are_isolated_per_level():
    op, nh = tiny(seed=3)
    batch = generate_batch(op, nh, 3, 2, np.random.default_rng(0))
    res = levelwise_losses(batch, nh, _fine_masks(nh))
    for level, r in res.items():
        assert set(r.grads) == set(nh.smoothers[level].params)
        for k, g in r.grads.items():
            assert g.shape == nh.smoothers[level].params[k].shape


def test_combined_loss_with_zero_smoothers_matches_direct_value():
    op = build_problem(ProblemSpec(n=32, alpha=1e-3))
    nh = zero_nh(op, 3)
    x = np.random.default_rng(4).standard_normal((4, 32))
    value, _ = combined_loss(Batch(x, op(x), np.ones(4, int)), nh, grads=False)
    direct = np.mean([np.sum((xi - nmg_cycle(nh, np.zeros(32), op(xi))) ** 2) for xi in x])
    assert abs(value - direct) <= 1e-12 * direct


def test_combined_loss_vanishes_for_exact_cycle():
    op = build_problem(ProblemSpec(n=32, alpha=1e-4))
    base = build_hierarchy(op, 3)
    nh = NeuralHierarchy(base, exact_band_smoothers(base, filtered=False), filtered=False)
    x = np.random.default_rng(5).standard_normal((4, 32))
    value, _ = combined_loss(Batch(x, op(x), np.ones(4, int)), nh, grads=False)
    assert value <= 1e-16 * np.sum(x * x)


def test_lower_level_parameters_change_the_loss_but_get_no_gradient():
    op, nh = tiny(seed=6)
    batch = generate_batch(op, nh, 3, 2, np.random.default_rng(0))
    masks = _fine_masks(nh)
    before = levelwise_losses(batch, nh, masks)
    nh.smoothers[1].params["proj.w"] += 0.1
    after = levelwise_losses(batch, nh, masks)
    assert after[2].loss != before[2].loss
    assert set(after[2].grads) == set(nh.smoothers[2].params)


def test_combined_gradients_match_finite_differences():
    op, nh = tiny(seed=4, filtered=False)
    batch = generate_batch(op, nh, 3, 2, np.random.default_rng(0))
    _, grads = combined_loss(batch, nh)
    assert set(grads) == {1, 2}
    rng = np.random.default_rng(2)
    for level in (1, 2):
        names = list(nh.smoothers[level].params)
        _fd_check(lambda: combined_loss(batch, nh, grads=False)[0], nh.smoothers, grads[level], level, names, rng,
                  picks=1)


def test_zero_epochs_returns_initialization():
    cfg = TrainConfig(L=3, epochs=0, channels=4, layers=2, seed=7)
    res = train(ProblemSpec(n=16, alpha=1e-2), cfg)
    base = build_hierarchy(build_problem(ProblemSpec(n=16, alpha=1e-2)), 3)
    init = init_smoothers(base, cfg, np.random.default_rng(7))
    for l in init:
        for k in init[l].params:
            assert np.array_equal(res.nh.smoothers[l].params[k], init[l].params[k])
    assert res.log.records == []


def test_training_is_deterministic(tmp_path):
    cfg = TrainConfig(L=3, epochs=3, batch_size=4, rollout_cap=2, channels=4, layers=2, seed=11,
                      curriculum=(1e-2, 1e-3))
    a = train(ProblemSpec(n=16), cfg, log_path=tmp_path / "a.jsonl")
    b = train(ProblemSpec(n=16), cfg, log_path=tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert TrainLog.read_jsonl(tmp_path / "a.jsonl").records == a.log.records
    for l in a.nh.smoothers:
        for k in a.nh.smoothers[l].params:
            assert a.nh.smoothers[l].params[k].tobytes() == b.nh.smoothers[l].params[k].tobytes()
    assert list(a.stages) == [1e-2, 1e-3]
    assert [r["stage"] for r in a.log.records] == [0, 0, 0, 1, 1, 1]


def test_training_changes_params_and_logs_bounds():
    cfg = TrainConfig(L=3, epochs=2, batch_size=4, rollout_cap=2, channels=4, layers=2)
    seen = []
    res = train(ProblemSpec(n=16, alpha=1e-2), cfg, callback=lambda rec, r: seen.append(rec))
    assert len(seen) == 2
    for rec in seen:
        assert set(rec["loss"]) == {"1", "2"}
        assert all(0 < v <= 1 + 1e-12 for v in rec["bound_ratio"].values())
    init = init_smoothers(res.nh.base, cfg, np.random.default_rng(0))
    assert not np.array_equal(init[1].params["lift.w"], res.nh.smoothers[1].params["lift.w"])


def test_combined_mode_log_contract():
    cfg = TrainConfig(L=3, epochs=2, batch_size=4, rollout_cap=2, channels=4, layers=2, loss="combined")
    res = train(ProblemSpec(n=16, alpha=1e-2), cfg)
    assert not res.nh.filtered
    assert all(set(r["loss"]) == {"0"} and "bound_ratio" not in r for r in res.log.records)


def test_learning_rate_schedule():
    cfg = TrainConfig(L=3, lr=1e-3, lr_halving=500, level_lr=(1e-3, 2e-3))
    assert cfg.lr_at(1, 0) == 1e-3 and cfg.lr_at(1, 499) == 1e-3 and cfg.lr_at(1, 500) == 5e-4
    assert cfg.lr_at(2, 1000) == 5e-4
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("kwargs,msg", [
    ({"L": 1}, "L must be"),
    ({"epochs": -1}, "epochs"),
    ({"curriculum": (1e-4, 1e-3)}, "decreasing"),
    ({"curriculum": (1e-3, -1.0)}, "positive"),
    ({"loss": "mse"}, "unknown loss"),
    ({"distribution": "cauchy"}, "distribution"),
    ({"level_lr": (1e-3,)}, "level_lr"),
])
def test_config_validation(kwargs, msg):
    with pytest.raises(TrainingError, match=msg):
        TrainConfig(**kwargs)


@pytest.mark.slow
def test_desk_run_losses_drop_tenfold(desk_levelwise):
    # the first curriculum stage is a plain 500-epoch desk run at alpha=1e-3
    first = desk_levelwise.config.curriculum[0]
    for level in (1, 2, 3):
        curve = desk_levelwise.log.losses(level, first)
        assert len(curve) == 500
        assert curve[-1] <= curve[0] / 10
