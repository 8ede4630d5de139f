import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from iod.staloss import (
    STAConfig,
    embed_tube,
    gradcheck,
    numeric_grad,
    optimize_offsets,
    random_tube,
    sta_grad,
    sta_loss,
    sta_terms,
    sta_value,
    sta_value_and_grad_xy,
)

from sta_oracle import loss as oracle_loss
from sta_oracle import terms as oracle_terms

CFG = STAConfig()
TRANSLATION = ([(3, 0), (3, 0)], [(0, 0), (0, 0)])
STAGGERED = ([(2, 0), (-2, 0)], [(0, 0), (0, 0)])

xy = st.floats(-50, 50, allow_nan=False)


@st.composite
def tubes(draw, min_T=2, max_T=8):
    T = draw(st.integers(min_T, max_T))
    gt = [(draw(xy), draw(xy)) for _ in range(T)]
    pred = [(draw(xy), draw(xy)) for _ in range(T)]
    return np.array(pred), np.array(gt)


def test_embedding_coordinates():
    e = embed_tube(*TRANSLATION, CFG)
    assert e.pred.tolist() == [[3, 0, 0], [3, 0, 4]]
    assert e.gt.tolist() == [[0, 0, 0], [0, 0, 4]]
    assert e.offsets.tolist() == [[0, 0], [0, 0]]


def test_embedding_preconditions():
    with pytest.raises(ValueError):
        embed_tube([(0, 0)], [(0, 0)], CFG)
    with pytest.raises(ValueError):
        embed_tube([(0, 0), (1, 1)], [(0, 0)], CFG)
    with pytest.raises(ValueError):
        STAConfig(zeta=0.0)
    with pytest.raises(ValueError):
        STAConfig(lam=1.5)


@pytest.mark.parametrize("case, expected_terms, expected_loss", [
    (TRANSLATION, (0.28, 1.0, 0.6, 0.6), 0.48),
    (([(0, 0), (0, 0)], [(0, 0), (0, 0)]), (1.0, 1.0, 0.0, 0.0), 0.0),
    (STAGGERED, (1.0, 1 / math.sqrt(2), 1 / math.sqrt(5), 1 / math.sqrt(5)), 0.296830),
])
def test_worked_configurations(case, expected_terms, expected_loss):
    e = embed_tube(*case, CFG)
    got = sta_terms(e).as_tuple()
    assert got == pytest.approx(oracle_terms(*case, 4.0), abs=1e-12)
    assert got == pytest.approx(expected_terms, abs=1e-6)
    assert sta_loss(sta_terms(e), CFG) == pytest.approx(oracle_loss(*case), abs=1e-12)
    assert sta_value(e, CFG) == pytest.approx(expected_loss, abs=1e-6)


@given(tubes(), st.floats(0.1, 20), st.floats(0, 1))
def test_matches_scalar_oracle(tube, zeta, lam):
    pred, gt = tube
    cfg = STAConfig(zeta=zeta, lam=lam)
    got = sta_value(embed_tube(pred, gt, cfg), cfg)
    assert got == pytest.approx(oracle_loss(pred.tolist(), gt.tolist(), zeta, lam), abs=1e-10)


@given(tubes())
def test_terms_in_range_and_loss_non_negative(tube):
    e = embed_tube(*tube, CFG)
    cc, cs, sp, sn = sta_terms(e).as_tuple()
    assert -1 <= cc <= 1 and -1 <= cs <= 1 and sp >= 0 and sn >= 0
    assert sta_value(e, CFG) >= 0


def test_offsets_shift_predictions():
    e = embed_tube([(0, 0), (0, 0)], [(1, 1), (2, 2)], CFG, offsets=[(1, 1), (2, 2)])
    assert sta_value(e, CFG) == 0.0


def test_gradient_zero_at_perfect_prediction():
    gt = np.array([(0.0, 1.0), (2.0, 3.0), (5.0, 4.0)])
    assert np.max(np.abs(sta_grad(embed_tube(gt, gt, CFG), CFG))) < 1e-15


def test_translation_gradient_is_mirror_symmetric():
    g = sta_grad(embed_tube(*TRANSLATION, CFG), CFG)
    assert g[0, 0] == pytest.approx(g[1, 0], abs=1e-12)
    assert g[0, 0] > 0  # pushes both predictions back toward x = 0


def test_gradient_matches_finite_differences():
    assert gradcheck(trials=30, seed=3) <= 1e-6


@given(tubes())
def test_gradient_property(tube):
    pred, gt = tube
    if np.min(np.linalg.norm(pred - gt, axis=1)) < 1e-3:
        return  # away from the same-frame kink
    _, g = sta_value_and_grad_xy(pred, gt, CFG)
    n = numeric_grad(pred, gt, CFG)
    assert np.max(np.abs(g - n)) <= 1e-5 * max(np.max(np.abs(n)), 1e-3)


def test_random_tube_bounds():
    rng = np.random.default_rng(0)
    pred, gt = random_tube(rng, 5)
    assert pred.shape == gt.shape == (5, 2)
    assert np.all(np.abs(pred - gt) <= 10)


def test_descent_on_staggered_case():
    e, trace = optimize_offsets(embed_tube(*STAGGERED, CFG), CFG, steps=500, step_size=0.1)
    assert np.all(np.diff(trace) <= 0)
    assert np.mean(np.linalg.norm(e.pred_xy - e.gt_xy, axis=1)) < 0.05
    assert trace[0] == pytest.approx(0.296830, abs=1e-6)


def test_descent_fixed_point():
    gt = [(0, 0), (1, 0), (2, 1)]
    _, trace = optimize_offsets(embed_tube(gt, gt, CFG), CFG, steps=10)
    assert trace == [0.0] * 11


def test_descent_preconditions():
    e = embed_tube(*STAGGERED, CFG)
    with pytest.raises(ValueError):
        optimize_offsets(e, CFG, steps=0)
    with pytest.raises(ValueError):
        optimize_offsets(e, CFG, step_size=0.0)


def test_large_zeta_limit():
    cfg = STAConfig(zeta=1e6)
    e = embed_tube(*STAGGERED, cfg)
    assert sta_value(e, cfg) < 1e-5
    refined, _ = optimize_offsets(e, cfg, steps=500, step_size=0.1)
    assert np.max(np.abs(refined.offsets)) < 1e-3


def test_loss_shrinks_as_zeta_grows():
    vals = [sta_value(embed_tube(*STAGGERED, STAConfig(zeta=z)), STAConfig(zeta=z)) for z in (1, 4, 16, 64, 256)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
