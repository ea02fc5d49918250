import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from consensus_attack.constraints import (
    Budget,
    LossSpec,
    argmax_label,
    attack_loss,
    is_success,
    margin_loss,
    project,
    project_l2,
    project_linf,
    shifted_loss,
    tanh_reparam,
    targeted_ce_loss,
)
from consensus_attack.exceptions import InvalidConfigError, InvalidInputError

vec = arrays(np.float64, 6, elements=st.floats(-10, 10))


def test_project_linf_examples():
    z = np.array([0.01, -0.02])
    np.testing.assert_array_equal(project_linf(z, 0.0, 0.05), z)
    assert project_linf(np.array([0.2]), 0.0, 0.05)[0] == 0.05


@settings(max_examples=200)
@given(vec, vec, st.floats(1e-6, 3.0))
def test_project_linf_bit_exact(z, c, eps):
    out = project_linf(z, c, eps)
    assert np.all(np.abs(out - c) <= eps)


def test_project_l2_examples():
    z = np.array([0.3, 0.4])
    np.testing.assert_array_equal(project_l2(z, 0.0, 1.0), z)
    np.testing.assert_allclose(project_l2(np.array([6.0, 0.0, 0.0]), 0.0, 3.0), [3.0, 0.0, 0.0])


@settings(max_examples=200)
@given(vec, vec, st.floats(1e-6, 3.0))
def test_project_l2_within_ball(z, c, eps):
    assert np.linalg.norm(project_l2(z, c, eps) - c) <= eps * (1 + 1e-12)


def test_project_dispatch_and_budget():
    assert project(np.array([2.0]), 0.0, 1.0, "linf")[0] == 1.0
    b = Budget("l2", 1.0)
    assert b.distance(np.array([3.0, 4.0]), np.zeros(2)) == pytest.approx(5.0)
    with pytest.raises(InvalidConfigError):
        Budget("l1", 1.0)


def test_tanh_reparam():
    c = np.array([0.5, 0.2])
    np.testing.assert_array_equal(tanh_reparam(np.zeros(2), c, 0.1), c)
    assert abs(tanh_reparam(np.array([10.0]), np.array([0.5]), 0.1)[0] - 0.6) < 1e-8


@given(vec, st.floats(1e-3, 1.0))
def test_tanh_reparam_in_ball(w, eps):
    assert np.all(np.abs(tanh_reparam(w, 0.0, eps)) <= eps)


def test_margin_examples():
    assert margin_loss([2.0, 1.0, 0.0], 0) == 1.0
    assert margin_loss([1.0, 2.0, 0.0], 0) == -1.0


@given(vec, st.integers(0, 5), st.floats(-100, 100))
def test_margin_shift_invariant(y, k, c):
    assert margin_loss(y + c, k) == pytest.approx(margin_loss(y, k), abs=1e-9)


def test_margin_display_convention_flips_sign():
    assert margin_loss([2.0, 1.0, 0.0], 0, convention="display") == -1.0


def test_targeted_ce_examples():
    assert targeted_ce_loss(np.zeros(4), 1) == pytest.approx(math.log(4))
    assert targeted_ce_loss(np.array([0.0, 200.0, 0.0]), 1) < 1e-12


@given(vec, st.integers(0, 5), st.floats(-100, 100))
def test_targeted_ce_shift_invariant(y, k, c):
    assert targeted_ce_loss(y + c, k) == pytest.approx(targeted_ce_loss(y, k), abs=1e-9)


def test_shifted_loss_examples():
    spec = LossSpec(label=2, targeted=True, shift=10.0)
    assert shifted_loss(1.2, [0.0, 1.0, 3.0], spec) == pytest.approx(-8.8)
    assert shifted_loss(1.2, [5.0, 1.0, 3.0], spec) == 1.2
    assert is_success([0.0, 1.0, 3.0], spec)
    untargeted = LossSpec(label=0)
    assert shifted_loss(-0.5, [0.0, 0.5], untargeted) == -0.5
    assert is_success([0.0, 0.5], untargeted)
    assert not is_success([1.0, 0.5], untargeted)


def test_attack_loss_dispatch():
    y = np.array([1.0, 3.0, 2.0])
    assert attack_loss(y, LossSpec(label=1)) == margin_loss(y, 1)
    assert attack_loss(y, LossSpec(label=1, targeted=True)) == targeted_ce_loss(y, 1)


def test_argmax_ties_lowest_index():
    assert argmax_label([1.0, 3.0, 3.0]) == 1


def test_loss_rejects_bad_label():
    with pytest.raises(InvalidInputError):
        margin_loss([1.0, 2.0], 5)
