import json
import math
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from consensus_attack.broker import AttackObjective, FunctionObjective, QueryBroker, QueryLedger
from consensus_attack.classifiers import LinearSoftmax, TinyMlp, load_tiny_mlp, toy_linear_classifier
from consensus_attack.constraints import Budget, LossSpec
from consensus_attack.exceptions import BudgetExceededError, InvalidInputError, ShapeError
from consensus_attack.io import read_tensor, write_mlp_weights, write_tensor
from consensus_attack.spaces import DirectSpace

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def test_ledger_charge_and_grant():
    led = QueryLedger(5)
    assert led.grant(10) == 5
    led.charge(5)
    assert led.exhausted and led.grant(3) == 0
    with pytest.raises(BudgetExceededError):
        led.charge(1)


def test_ledger_rejects_bad_budget():
    with pytest.raises(ValueError):
        QueryLedger(-1)
    with pytest.raises(ValueError):
        QueryLedger(2.5)


def test_query_batch_exhausted_budget():
    ledger = QueryLedger(5)
    ledger.charge(5)
    broker = QueryBroker(LinearSoftmax(np.eye(3)), ledger)
    out = broker.query_batch(np.zeros((4, 3)))
    assert len(out) == 0 and broker.exhausted and ledger.used == 5


def test_query_batch_identity_logits():
    broker = QueryBroker(LinearSoftmax(np.eye(3)))
    np.testing.assert_array_equal(broker.query_batch(np.array([[0.1, 0.2, 0.3]])), [[0.1, 0.2, 0.3]])
    # the linear map itself is not range-restricted
    np.testing.assert_array_equal(LinearSoftmax(np.eye(3)).predict_logits([1.0, 2.0, 3.0]), [[1, 2, 3]])


def test_query_batch_truncates():
    ledger = QueryLedger(4)
    seen = []
    broker = QueryBroker(LinearSoftmax(np.eye(2)), ledger, on_query=seen.append)
    out = broker.query_batch(np.full((10, 2), 0.5))
    assert len(out) == 4 and broker.exhausted and ledger.used == 4
    assert sum(len(b) for b in seen) == 4


def test_query_batch_asserts_range():
    with pytest.raises(InvalidInputError):
        QueryBroker(LinearSoftmax(np.eye(2))).query_batch(np.array([[1.5, 0.0]]))


def test_logits_deterministic():
    clf = toy_linear_classifier()
    x = np.random.default_rng(0).random((5, 16))
    np.testing.assert_array_equal(clf.predict_logits(x), clf.predict_logits(x.copy()))


def test_function_objective_success_attribution():
    obj = FunctionObjective(lambda X: X[:, 0], budget=100, success_below=0.0)
    obj(np.array([[1.0], [2.0]]))
    obj(np.array([[3.0], [-1.0], [-2.0]]))
    assert obj.success and obj.success_query == 4 and obj.queries_used == 5


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 50), st.lists(st.integers(1, 20), min_size=1, max_size=10))
def test_objective_never_exceeds_budget(q, batches):
    obj = FunctionObjective(lambda X: X[:, 0], budget=q, success_below=-0.5)
    rng = np.random.default_rng(q)
    for n in batches:
        vals = obj(rng.uniform(-1, 1, (n, 1)))
        assert len(vals) <= n
    assert obj.queries_used <= q
    if obj.success:
        assert obj.success_query <= obj.queries_used


def test_attack_objective_tracks_images():
    clf = toy_linear_classifier()
    x = np.full((1, 4, 4), 0.5)
    label = int(clf.predict(x.reshape(1, -1))[0])
    space = DirectSpace((1, 4, 4), Budget("linf", 0.3))
    obj = AttackObjective(clf, space, x, LossSpec(label=label), budget=20)
    vals = obj(space.sample(0, 20))
    assert len(vals) == 20 and obj.queries_used == 20
    assert obj.output_image is not None
    assert np.max(np.abs(obj.output_image - x)) <= 0.3
    if obj.success:
        assert int(np.argmax(obj.output_logits)) != label


# --- tiny MLP ----------------------------------------------------------------------

def test_tiny_mlp_zero_weights(tmp_path):
    path = tmp_path / "zero.bin"
    write_mlp_weights(path, np.zeros((3, 4)), np.zeros(3), np.zeros((2, 3)), np.zeros(2))
    clf = load_tiny_mlp(path)
    assert np.all(clf.predict_logits(np.random.default_rng(0).random((5, 4))) == 0)


def test_tiny_mlp_fixture():
    clf = load_tiny_mlp(os.path.join(FIXTURES, "tiny_mlp.bin"))
    with open(os.path.join(FIXTURES, "tiny_mlp.json"), encoding="utf-8") as fh:
        ref = json.load(fh)
    out = clf.predict_logits(np.array(ref["inputs"]))
    assert np.max(np.abs(out - np.array(ref["logits"]))) < 1e-6


def test_tiny_mlp_shape_mismatch():
    clf = load_tiny_mlp(os.path.join(FIXTURES, "tiny_mlp.bin"))
    with pytest.raises(ShapeError):
        clf.predict_logits(np.zeros((1, clf.input_dim + 1)))


def test_tiny_mlp_rejects_inconsistent_weights():
    with pytest.raises(ShapeError):
        TinyMlp(np.zeros((3, 4)), np.zeros(2), np.zeros((2, 3)), np.zeros(2))


def test_malformed_weights_file(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"not json\n\x00\x00")
    with pytest.raises(InvalidInputError):
        load_tiny_mlp(bad)
    short = tmp_path / "short.bin"
    short.write_bytes(json.dumps({"dims": [2, 2, 2]}).encode() + b"\n" + b"\x00" * 8)
    with pytest.raises(ShapeError):
        load_tiny_mlp(short)


def test_tensor_roundtrip(tmp_path):
    x = np.random.default_rng(1).random((3, 5, 4)).astype(np.float32).astype(float)
    write_tensor(tmp_path / "x.tensor", x)
    np.testing.assert_array_equal(read_tensor(tmp_path / "x.tensor"), x)


def test_tensor_header_format(tmp_path):
    write_tensor(tmp_path / "x.tensor", np.zeros((1, 2, 2)))
    raw = (tmp_path / "x.tensor").read_bytes()
    header, body = raw.split(b"\n", 1)
    assert json.loads(header) == {"shape": [1, 2, 2]} and len(body) == 16


def test_toy_classifier_shape():
    clf = toy_linear_classifier()
    assert (clf.n_classes, clf.input_dim) == (4, 16)
    assert math.isfinite(float(clf.predict_logits(np.zeros(16)).sum()))
