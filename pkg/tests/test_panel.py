import io

import numpy as np
import pytest

from chunkrl.panel import (EmptySelectionError, Panel, PanelError, Window, dumps_panel, load_panel,
                           save_panel, transitions)
from conftest import random_panel

CSV_2x3 = """subject,t,a,r,s_0
0,0,1,0.5,0.1
0,1,-1,0.2,0.3
0,2,1,0.0,-0.2
1,0,-1,1.0,1.1
1,1,1,0.1,0.9
1,2,-1,0.3,0.4
"""


def test_load_small_csv_shape():
    p = load_panel(io.StringIO(CSV_2x3))
    assert (p.n_subjects, p.horizon, p.state_dim) == (2, 2, 1)
    assert p.states[1, 1, 0] == 0.9
    assert p.actions.tolist() == [[1, -1, 1], [-1, 1, -1]]


def test_load_from_bytes():
    p = load_panel(CSV_2x3.encode())
    assert p.rewards[0, 0] == 0.5


def test_unknown_action_label_rejected():
    bad = CSV_2x3.replace("0,1,-1,0.2", "0,1,2,0.2")
    with pytest.raises(PanelError) as err:
        load_panel(io.StringIO(bad))
    assert err.value.line == 3
    assert "line 3" in str(err.value)


def test_malformed_row_reports_line():
    bad = CSV_2x3.replace("1,1,1,0.1,0.9", "1,1,1,zz,0.9")
    with pytest.raises(PanelError) as err:
        load_panel(io.StringIO(bad))
    assert err.value.line == 6


def test_ragged_trajectories_rejected():
    bad = "\n".join(CSV_2x3.strip().splitlines()[:-1]) + "\n"
    with pytest.raises(PanelError, match="ragged"):
        load_panel(io.StringIO(bad))


def test_non_finite_rejected():
    with pytest.raises(PanelError):
        load_panel(io.StringIO(CSV_2x3.replace("0.3,0.4", "0.3,nan")))
    with pytest.raises(PanelError):
        Panel(np.array([[[0.0], [np.inf]]]), np.ones((1, 2), int), np.zeros((1, 2)))


def test_custom_action_labels():
    lines = CSV_2x3.strip().splitlines()
    rows = [line.split(",") for line in lines[1:]]
    for r in rows:
        r[2] = {"1": "trt", "-1": "ctl"}[r[2]]
    text = "\n".join([lines[0]] + [",".join(r) for r in rows]) + "\n"
    p = load_panel(io.StringIO(text), action_space="ctl=-1,trt=1")
    assert p.actions.tolist() == [[1, -1, 1], [-1, 1, -1]]
    back = load_panel(io.StringIO(dumps_panel(p)), action_space="ctl=-1,trt=1")
    assert back.equals(p)


@pytest.mark.parametrize("fmt", ["csv", "jsonl"])
@pytest.mark.parametrize("seed", range(5))
def test_round_trip_identity(fmt, seed):
    p = random_panel(seed, n=4, horizon=7, d=3)
    buf = io.StringIO()
    save_panel(p, buf, fmt)
    back = load_panel(io.StringIO(buf.getvalue()), fmt)
    assert back.equals(p)
    # field by field
    assert np.array_equal(back.states, p.states)
    assert np.array_equal(back.actions, p.actions)
    assert np.array_equal(back.rewards, p.rewards)
    assert back.action_space == p.action_space


def test_jsonl_meta_action_space():
    text = '{"meta": {"action_space": {"a": 0, "b": 1}}}\n' \
           '{"states": [[0.0], [1.0]], "actions": ["a", "b"], "rewards": [0, 1]}\n'
    p = load_panel(io.StringIO(text), "jsonl")
    assert p.actions.tolist() == [[0, 1]]
    assert p.action_codes.tolist() == [0, 1]


def test_transition_counts():
    p = random_panel(n=1, horizon=4)
    assert len(transitions(p, [0], Window(0, 2))) == 2
    p = random_panel(n=3, horizon=12)
    assert len(transitions(p, [0, 1, 2], Window(5, 10))) == 15


def test_transitions_match_naive_loop():
    p = random_panel(3, n=4, horizon=9, d=2)
    subjects, w = [2, 0, 3], Window(3, 8)
    tr = transitions(p, subjects, w)
    expected = []
    for i in subjects:
        for t in range(w.start, w.end):
            expected.append((p.states[i, t], p.actions[i, t], p.rewards[i, t], p.states[i, t + 1], i, t))
    assert len(tr) == len(expected)
    for k, (s, a, r, s2, i, t) in enumerate(expected):
        assert np.array_equal(tr.states[k], s)
        assert tr.actions[k] == a and tr.rewards[k] == r
        assert np.array_equal(tr.next_states[k], s2)
        assert tr.subject[k] == i and tr.time[k] == t


def test_empty_selection_errors(panel):
    with pytest.raises(EmptySelectionError):
        transitions(panel, [], Window(0, 2))
    with pytest.raises(EmptySelectionError):
        transitions(panel, [0], (2, 2))
    with pytest.raises(ValueError):
        Window(3, 1)


def test_panel_is_immutable(panel):
    with pytest.raises(ValueError):
        panel.states[0, 0, 0] = 1.0
    with pytest.raises(Exception):
        panel.states = np.zeros(1)


def test_slice_and_subset(panel):
    sub = panel.slice_time(2, 5)
    assert sub.horizon == 3
    assert np.array_equal(sub.states, panel.states[:, 2:6])
    assert panel.subset([2]).n_subjects == 1
