import json

import numpy as np
import pytest

from marcq import PhaseType, SpecError, WorkloadSpec, exponential_class, load_spec, save_spec
from marcq.workload import JobClass, spec_from_dict


def _doc(**over):
    doc = {"k": 2, "classes": [
        {"need": 1, "prob": 0.5, "duration": {"type": "exp", "rate": 1.0}},
        {"need": 2, "prob": 0.5, "duration": {"type": "exp", "rate": 0.5}},
    ]}
    doc.update(over)
    return doc


def test_load_running_example(specs_dir):
    spec = load_spec(specs_dir / "running_example.json")
    assert spec.k == 2
    assert list(spec.needs) == [1, 2]
    assert np.allclose(spec.probs, [2 / 3, 1 / 3])
    assert spec.classes[1].duration.mean == pytest.approx(2.0)


def test_probabilities_must_sum_to_one():
    doc = _doc()
    doc["classes"][0]["prob"] = 0.6
    with pytest.raises(SpecError, match="sum"):
        spec_from_dict(doc)


def test_need_larger_than_k_rejected():
    with pytest.raises(SpecError, match="exceeds k"):
        WorkloadSpec(1, (exponential_class(2, 1.0, 1.0),))


@pytest.mark.parametrize("bad", [0, -1, 1.5, True])
def test_bad_need(bad):
    doc = _doc()
    doc["classes"][0]["need"] = bad
    with pytest.raises(SpecError):
        spec_from_dict(doc)


def test_nonpositive_rate_rejected():
    with pytest.raises(SpecError):
        PhaseType.exponential(0.0)


def test_erlang_exit_is_derived():
    d = PhaseType([1.0, 0.0], [[-2.0, 2.0], [0.0, -2.0]])
    assert np.allclose(d.exit, [0.0, 2.0])
    assert d.mean == pytest.approx(1.0)


def test_supplied_exit_rejected():
    doc = _doc()
    doc["classes"][0]["duration"] = {"type": "phase", "init": [1.0], "subgen": [[-1.0]], "exit": [1.0]}
    with pytest.raises(SpecError, match="exit"):
        spec_from_dict(doc)


@pytest.mark.parametrize("init,subgen", [
    ([0.5, 0.4], [[-1, 0], [0, -1]]),          # init does not sum to 1
    ([1.0, 0.0], [[-1, -0.5], [0, -1]]),       # negative off-diagonal
    ([1.0, 0.0], [[-1, 2], [0, -1]]),          # negative exit rate
    ([1.0, 0.0], [[-1, 1], [1, -1]]),          # never absorbs
    ([1.0], [[-1, 0]]),                         # not square
])
def test_phase_type_invariants(init, subgen):
    with pytest.raises(SpecError):
        PhaseType(init, subgen)


def test_round_trip(tmp_path):
    spec = WorkloadSpec(3, (exponential_class(1, 0.25, 2.0),
                            JobClass(3, 0.75, PhaseType([0.3, 0.7], [[-3.0, 1.0], [0.5, -2.0]]))))
    path = tmp_path / "w.json"
    save_spec(spec, path)
    again = load_spec(path)
    assert again == spec
    assert again.digest() == spec.digest()
    assert json.loads(path.read_text())["classes"][1]["duration"]["type"] == "phase"


def test_fresh_states_probabilities():
    spec = WorkloadSpec(2, (JobClass(1, 0.5, PhaseType([0.25, 0.75], [[-1.0, 0.0], [0.0, -2.0]])),
                            exponential_class(2, 0.5, 1.0)))
    fresh = spec.fresh_states()
    assert len(fresh) == 3
    assert sum(p for _, p in fresh) == pytest.approx(1.0)


def test_not_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{nope")
    with pytest.raises(SpecError):
        load_spec(p)
