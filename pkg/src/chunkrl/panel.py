"""Panel storage: N subjects observed over time steps 0..T.

States are stored as an ``(N, T + 1, d)`` array, actions as integer codes of
shape ``(N, T + 1)`` and rewards as ``(N, T + 1)`` floats.  Transition ``t``
of subject ``i`` goes from ``states[i, t]`` to ``states[i, t + 1]``; a
:class:`Window` ``[start, end]`` therefore holds ``end - start`` transitions.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import IO, Iterable, NamedTuple, Sequence

import numpy as np

DEFAULT_ACTION_SPACE: dict[str, int] = {"-1": -1, "1": 1}


class PanelError(ValueError):
    """Raised for malformed or inconsistent panel data."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptySelectionError(ValueError):
    pass


@dataclass(frozen=True)
class Window:
    start: int
    end: int

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ValueError(f"invalid window [{self.start}, {self.end}]")

    @property
    def length(self) -> int:
        return self.end - self.start


class Transitions(NamedTuple):
    states: np.ndarray       # (n, d)
    actions: np.ndarray      # (n,)
    rewards: np.ndarray      # (n,)
    next_states: np.ndarray  # (n, d)
    subject: np.ndarray      # (n,)
    time: np.ndarray         # (n,) source time index

    def __len__(self) -> int:  # type: ignore[override]
        return int(self.actions.shape[0])


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Panel:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    action_space: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_ACTION_SPACE))

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 2:
            states = states[:, :, None]
        if states.ndim != 3:
            raise PanelError(f"states must be (N, T+1, d), got shape {states.shape}")
        n, tp1, d = states.shape
        if n < 1 or tp1 < 2 or d < 1:
            raise PanelError(f"need N>=1, T>=1, d>=1; got shape {states.shape}")
        actions = np.asarray(self.actions)
        rewards = np.asarray(self.rewards, dtype=float)
        if actions.shape != (n, tp1) or rewards.shape != (n, tp1):
            raise PanelError(
                f"actions/rewards must have shape {(n, tp1)}, "
                f"got {actions.shape} and {rewards.shape}"
            )
        if not np.all(np.isfinite(states)):
            raise PanelError("states contain non-finite values")
        if not np.all(np.isfinite(rewards)):
            raise PanelError("rewards contain non-finite values")
        if not np.all(np.isfinite(actions.astype(float))) or np.any(actions != np.round(actions)):
            raise PanelError("actions must be integer codes")
        actions = actions.astype(np.int64)
        codes = set(int(c) for c in self.action_space.values())
        if len(codes) != len(self.action_space):
            raise PanelError("action codes must be unique")
        bad = set(np.unique(actions).tolist()) - codes
        if bad:
            raise PanelError(f"actions {sorted(bad)} not in action space {sorted(codes)}")
        object.__setattr__(self, "states", _readonly(states))
        object.__setattr__(self, "actions", _readonly(actions))
        object.__setattr__(self, "rewards", _readonly(rewards))
        object.__setattr__(self, "action_space", dict(self.action_space))

    @property
    def n_subjects(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.states.shape[1] - 1

    @property
    def state_dim(self) -> int:
        return self.states.shape[2]

    @property
    def action_codes(self) -> np.ndarray:
        return np.array(sorted(self.action_space.values()), dtype=np.int64)

    def full_window(self) -> Window:
        return Window(0, self.horizon)

    def subset(self, subjects: Sequence[int]) -> "Panel":
        idx = check_subjects(self, subjects)
        return Panel(self.states[idx], self.actions[idx], self.rewards[idx], self.action_space)

    def slice_time(self, start: int, end: int) -> "Panel":
        """Sub-panel over times ``start..end`` inclusive, re-indexed from 0."""
        Window(start, end)
        if end > self.horizon:
            raise ValueError(f"end {end} beyond horizon {self.horizon}")
        sl = slice(start, end + 1)
        return Panel(self.states[:, sl], self.actions[:, sl], self.rewards[:, sl], self.action_space)

    def equals(self, other: "Panel") -> bool:
        return (
            self.action_space == other.action_space
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.rewards, other.rewards)
        )


def check_subjects(panel: Panel, subjects: Iterable[int] | None) -> np.ndarray:
    if subjects is None:
        return np.arange(panel.n_subjects)
    idx = np.asarray(list(subjects), dtype=np.int64).ravel()
    if idx.size == 0:
        raise EmptySelectionError("empty subject set")
    if len(np.unique(idx)) != idx.size:
        raise ValueError("subject indices must be unique")
    if idx.min() < 0 or idx.max() >= panel.n_subjects:
        raise IndexError(f"subject index out of range [0, {panel.n_subjects})")
    return idx


def check_window(panel: Panel, window: Window | tuple[int, int] | None) -> Window:
    if window is None:
        return panel.full_window()
    if not isinstance(window, Window):
        start, end = window
        if start == end:
            raise EmptySelectionError("zero-length window")
        window = Window(int(start), int(end))
    if window.end > panel.horizon:
        raise ValueError(f"window end {window.end} beyond horizon {panel.horizon}")
    return window


def transitions(panel: Panel, subjects: Iterable[int] | None = None,
                window: Window | tuple[int, int] | None = None) -> Transitions:
    """All transitions of ``subjects`` inside ``window``, ordered by (subject, time)."""
    idx = check_subjects(panel, subjects)
    w = check_window(panel, window)
    ts = np.arange(w.start, w.end)
    s = panel.states[idx][:, ts]
    s_next = panel.states[idx][:, ts + 1]
    d = panel.state_dim
    return Transitions(
        states=s.reshape(-1, d),
        actions=panel.actions[idx][:, ts].reshape(-1),
        rewards=panel.rewards[idx][:, ts].reshape(-1),
        next_states=s_next.reshape(-1, d),
        subject=np.repeat(idx, len(ts)),
        time=np.tile(ts, len(idx)),
    )


# ---------------------------------------------------------------------------
# I/O


def _parse_action_space(spec: str | dict | None) -> dict[str, int]:
    if spec is None:
        return dict(DEFAULT_ACTION_SPACE)
    if isinstance(spec, dict):
        return {str(k): int(v) for k, v in spec.items()}
    # "label=code,label=code" or "-1,1" (labels equal to codes)
    out: dict[str, int] = {}
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" in part:
            label, code = part.split("=", 1)
            out[label.strip()] = int(code)
        else:
            out[part] = int(part)
    if not out:
        raise PanelError("empty action space")
    return out


def _float(text: str, line: int, name: str) -> float:
    try:
        x = float(text)
    except ValueError:
        raise PanelError(f"cannot parse {name}={text!r} as a number", line) from None
    if not np.isfinite(x):
        raise PanelError(f"non-finite {name}", line)
    return x


def _text(source: IO | bytes | str) -> io.TextIOBase:
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8"))
    if isinstance(source, str):
        return io.StringIO(source)
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return io.StringIO(data)


def _load_csv(stream, action_space: dict[str, int]) -> Panel:
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise PanelError("empty CSV stream", 1) from None
    header = [h.strip() for h in header]
    if header[:4] != ["subject", "t", "a", "r"] or len(header) < 5:
        raise PanelError("header must be subject,t,a,r,s_0,...,s_{d-1}", 1)
    d = len(header) - 4
    if header[4:] != [f"s_{j}" for j in range(d)]:
        raise PanelError("state columns must be named s_0..s_{d-1}", 1)
    rows: dict[int, dict[int, tuple]] = {}
    order: list[int] = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise PanelError(f"expected {len(header)} fields, got {len(row)}", lineno)
        try:
            subj, t = int(row[0]), int(row[1])
        except ValueError:
            raise PanelError("subject and t must be integers", lineno) from None
        label = row[2].strip()
        if label not in action_space:
            raise PanelError(f"action {label!r} not in action space", lineno)
        r = _float(row[3], lineno, "r")
        s = tuple(_float(x, lineno, f"s_{j}") for j, x in enumerate(row[4:]))
        if subj not in rows:
            rows[subj] = {}
            order.append(subj)
        if t in rows[subj]:
            raise PanelError(f"duplicate row for subject {subj}, t={t}", lineno)
        rows[subj][t] = (action_space[label], r, s)
    if not rows:
        raise PanelError("no data rows", 2)
    lengths = {len(v) for v in rows.values()}
    if len(lengths) != 1:
        raise PanelError(f"ragged trajectories: lengths {sorted(lengths)}")
    tp1 = lengths.pop()
    for subj, traj in rows.items():
        if sorted(traj) != list(range(tp1)):
            raise PanelError(f"subject {subj} times must be 0..{tp1 - 1}")
    order_sorted = sorted(order)
    if order_sorted != list(range(len(order))):
        raise PanelError("subject ids must be 0..N-1")
    states = np.array([[rows[i][t][2] for t in range(tp1)] for i in order_sorted])
    actions = np.array([[rows[i][t][0] for t in range(tp1)] for i in order_sorted])
    rewards = np.array([[rows[i][t][1] for t in range(tp1)] for i in order_sorted])
    return Panel(states.reshape(len(order), tp1, d), actions, rewards, action_space)


def _load_jsonl(stream, action_space: dict[str, int] | None) -> Panel:
    subjects = []
    meta_space = None
    for lineno, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise PanelError(f"invalid JSON: {exc.msg}", lineno) from None
        if "meta" in obj:
            meta_space = obj["meta"].get("action_space")
            continue
        try:
            subjects.append((lineno, obj["states"], obj["actions"], obj["rewards"]))
        except KeyError as exc:
            raise PanelError(f"missing key {exc}", lineno) from None
    space = _parse_action_space(meta_space if meta_space is not None else action_space)
    if not subjects:
        raise PanelError("no subjects in JSONL stream")
    code_of = space
    lengths = {len(s[1]) for s in subjects} | {len(s[2]) for s in subjects} | {len(s[3]) for s in subjects}
    if len(lengths) != 1:
        raise PanelError(f"ragged trajectories: lengths {sorted(lengths)}")
    states, actions, rewards = [], [], []
    for lineno, s, a, r in subjects:
        try:
            arr = np.asarray(s, dtype=float)
        except (TypeError, ValueError):
            raise PanelError("states must be numeric arrays", lineno) from None
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise PanelError("ragged state vectors", lineno)
        if not np.all(np.isfinite(arr)) or not np.all(np.isfinite(np.asarray(r, dtype=float))):
            raise PanelError("non-finite value", lineno)
        try:
            codes = [code_of[str(x)] for x in a]
        except KeyError as exc:
            raise PanelError(f"action {exc} not in action space", lineno) from None
        states.append(arr)
        actions.append(codes)
        rewards.append(r)
    dims = {x.shape[1] for x in states}
    if len(dims) != 1:
        raise PanelError("state dimension differs between subjects")
    return Panel(np.stack(states), np.array(actions), np.array(rewards, dtype=float), space)


def load_panel(source: IO | bytes | str, format: str = "csv",
               action_space: str | dict | None = None) -> Panel:
    """Parse a panel from a CSV or JSONL byte/text stream.

    CSV rows are ``subject,t,a,r,s_0,...,s_{d-1}``; the action labels are
    declared by ``action_space`` (``"-1,1"`` or ``"ctl=0,trt=1"``).  JSONL
    holds one object per subject with ``states``, ``actions`` and ``rewards``
    arrays, optionally preceded by ``{"meta": {"action_space": {...}}}``.
    """
    stream = _text(source)
    if format == "csv":
        return _load_csv(stream, _parse_action_space(action_space))
    if format == "jsonl":
        return _load_jsonl(stream, action_space)
    raise ValueError(f"unknown format {format!r}")


def _code_labels(panel: Panel) -> dict[int, str]:
    return {code: label for label, code in panel.action_space.items()}


def save_panel(panel: Panel, sink: IO[str], format: str = "csv") -> None:
    labels = _code_labels(panel)
    if format == "csv":
        w = csv.writer(sink, lineterminator="\n")
        w.writerow(["subject", "t", "a", "r"] + [f"s_{j}" for j in range(panel.state_dim)])
        for i in range(panel.n_subjects):
            for t in range(panel.horizon + 1):
                w.writerow(
                    [i, t, labels[int(panel.actions[i, t])], repr(float(panel.rewards[i, t]))]
                    + [repr(float(x)) for x in panel.states[i, t]]
                )
    elif format == "jsonl":
        sink.write(json.dumps({"meta": {"action_space": panel.action_space}}) + "\n")
        for i in range(panel.n_subjects):
            obj = {
                "states": panel.states[i].tolist(),
                "actions": [labels[int(a)] for a in panel.actions[i]],
                "rewards": panel.rewards[i].tolist(),
            }
            sink.write(json.dumps(obj) + "\n")
    else:
        raise ValueError(f"unknown format {format!r}")


def dumps_panel(panel: Panel, format: str = "csv") -> str:
    buf = io.StringIO()
    save_panel(panel, buf, format)
    return buf.getvalue()
