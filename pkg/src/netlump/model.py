"""Multi-state contact process models and their textual description.

A model file looks like::

    states: S, I, R
    S + I -> I + I : 6.0    # contact rule, the first node changes
    I -> R : 4.0            # independent rule
    R -> S : 1.0

In a contact rule the second node is the context: it must carry the same
state on both sides of the arrow.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelParseError, ValidationError

__all__ = [
    "StateSpace",
    "IndependentRule",
    "ContactRule",
    "ContactModel",
    "RuleIndex",
    "parse_model",
    "load_model",
    "format_model",
    "build_rule_index",
]


@dataclass(frozen=True)
class StateSpace:
    states: tuple[str, ...]

    def __post_init__(self):
        if len(self.states) < 2:
            raise ValidationError("a model needs at least two states")
        if any(not s for s in self.states):
            raise ValidationError("state names must be non-empty")
        if len(set(self.states)) != len(self.states):
            raise ValidationError(f"duplicate state names in {self.states}")

    def __len__(self):
        return len(self.states)

    def index(self, name: str) -> int:
        return self.states.index(name)


@dataclass(frozen=True)
class IndependentRule:
    from_state: int
    to_state: int
    rate: float

    def __post_init__(self):
        if self.from_state == self.to_state:
            raise ValidationError("independent rule must change the state")
        if not (self.rate >= 0 and math.isfinite(self.rate)):
            raise ValidationError(f"rate must be finite and nonnegative, got {self.rate}")


@dataclass(frozen=True)
class ContactRule:
    from_state: int
    to_state: int
    context_state: int
    rate: float

    def __post_init__(self):
        if self.from_state == self.to_state:
            raise ValidationError("contact rule must change the state of the first node")
        if not (self.rate >= 0 and math.isfinite(self.rate)):
            raise ValidationError(f"rate must be finite and nonnegative, got {self.rate}")


@dataclass(frozen=True)
class ContactModel:
    state_space: StateSpace
    independent: tuple[IndependentRule, ...] = ()
    contact: tuple[ContactRule, ...] = ()

    def __post_init__(self):
        n = len(self.state_space)
        if not self.independent and not self.contact:
            raise ValidationError("model has no rules")
        for r in self.independent:
            if not (0 <= r.from_state < n and 0 <= r.to_state < n):
                raise ValidationError(f"rule {r} refers to an unknown state")
        for r in self.contact:
            if not all(0 <= s < n for s in (r.from_state, r.to_state, r.context_state)):
                raise ValidationError(f"rule {r} refers to an unknown state")

    @property
    def states(self) -> tuple[str, ...]:
        return self.state_space.states

    @property
    def n_states(self) -> int:
        return len(self.state_space)


@dataclass(frozen=True, eq=False)
class RuleIndex:
    """Gain/loss/transition sets of a model, plus dense arrays for the kernels.

    Sets hold positions into ``model.independent`` / ``model.contact``.
    """

    n_states: int
    indep_gain: tuple[tuple[int, ...], ...]
    indep_loss: tuple[tuple[int, ...], ...]
    contact_gain: tuple[tuple[int, ...], ...]
    contact_loss: tuple[tuple[int, ...], ...]
    indep_transition: dict = field(repr=False)
    contact_transition: dict = field(repr=False)
    # dense views used by the right-hand sides
    i_from: np.ndarray = field(repr=False)
    i_to: np.ndarray = field(repr=False)
    i_rate: np.ndarray = field(repr=False)
    c_from: np.ndarray = field(repr=False)
    c_to: np.ndarray = field(repr=False)
    c_ctx: np.ndarray = field(repr=False)
    c_rate: np.ndarray = field(repr=False)
    # incidence (n_states, n_rules): +1 for the target state, -1 for the source
    i_net: np.ndarray = field(repr=False)
    c_net: np.ndarray = field(repr=False)
    i_plus: np.ndarray = field(repr=False)
    c_plus: np.ndarray = field(repr=False)
    c_minus: np.ndarray = field(repr=False)
    # per ordered pair (s', s''): total independent rate s'->s''
    i_pair_rate: np.ndarray = field(repr=False)


def build_rule_index(model: ContactModel) -> RuleIndex:
    n = model.n_states
    ig = [[] for _ in range(n)]
    il = [[] for _ in range(n)]
    cg = [[] for _ in range(n)]
    cl = [[] for _ in range(n)]
    it: dict[tuple[int, int], list[int]] = {}
    ct: dict[tuple[int, int], list[int]] = {}
    for pos, r in enumerate(model.independent):
        ig[r.to_state].append(pos)
        il[r.from_state].append(pos)
        it.setdefault((r.from_state, r.to_state), []).append(pos)
    for pos, r in enumerate(model.contact):
        cg[r.to_state].append(pos)
        cl[r.from_state].append(pos)
        ct.setdefault((r.from_state, r.to_state), []).append(pos)

    i_from = np.array([r.from_state for r in model.independent], dtype=np.intp)
    i_to = np.array([r.to_state for r in model.independent], dtype=np.intp)
    i_rate = np.array([r.rate for r in model.independent], dtype=float)
    c_from = np.array([r.from_state for r in model.contact], dtype=np.intp)
    c_to = np.array([r.to_state for r in model.contact], dtype=np.intp)
    c_ctx = np.array([r.context_state for r in model.contact], dtype=np.intp)
    c_rate = np.array([r.rate for r in model.contact], dtype=float)

    def incidence(idx, count):
        m = np.zeros((n, count))
        m[idx, np.arange(count)] = 1.0
        return m

    i_plus = incidence(i_to, len(i_to))
    i_minus = incidence(i_from, len(i_from))
    c_plus = incidence(c_to, len(c_to))
    c_minus = incidence(c_from, len(c_from))
    i_pair_rate = np.zeros((n, n))
    np.add.at(i_pair_rate, (i_from, i_to), i_rate)

    return RuleIndex(
        n_states=n,
        indep_gain=tuple(map(tuple, ig)),
        indep_loss=tuple(map(tuple, il)),
        contact_gain=tuple(map(tuple, cg)),
        contact_loss=tuple(map(tuple, cl)),
        indep_transition={k: tuple(v) for k, v in it.items()},
        contact_transition={k: tuple(v) for k, v in ct.items()},
        i_from=i_from, i_to=i_to, i_rate=i_rate,
        c_from=c_from, c_to=c_to, c_ctx=c_ctx, c_rate=c_rate,
        i_net=i_plus - i_minus, c_net=c_plus - c_minus,
        i_plus=i_plus, c_plus=c_plus, c_minus=c_minus,
        i_pair_rate=i_pair_rate,
    )


# --------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r\f\v]+)
  | (?P<arrow>->)
  | (?P<number>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?(?![A-Za-z_]))
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<plus>\+)
  | (?P<colon>:)
  | (?P<comma>,)
    """,
    re.VERBOSE,
)


def _tokenize(line: str, lineno: int):
    tokens = []
    pos = 0
    while pos < len(line):
        m = _TOKEN.match(line, pos)
        if m is None:
            raise ModelParseError(f"unexpected character {line[pos]!r}", lineno, pos + 1)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos + 1))
        pos = m.end()
    return tokens


class _Cursor:
    def __init__(self, tokens, lineno, line_len):
        self.tokens = tokens
        self.i = 0
        self.lineno = lineno
        self.end_col = line_len + 1

    def peek(self):
        return self.tokens[self.i][0] if self.i < len(self.tokens) else None

    def expect(self, kind, what=None):
        if self.i >= len(self.tokens):
            raise ModelParseError(f"expected {what or kind}, found end of line", self.lineno, self.end_col)
        tk, text, col = self.tokens[self.i]
        if tk != kind:
            raise ModelParseError(f"expected {what or kind}, found {text!r}", self.lineno, col)
        self.i += 1
        return text, col

    def done(self):
        if self.i < len(self.tokens):
            _, text, col = self.tokens[self.i]
            raise ModelParseError(f"unexpected {text!r}", self.lineno, col)


def _parse_side(cur: _Cursor):
    names = [cur.expect("name", "state name")]
    if cur.peek() == "plus":
        cur.i += 1
        names.append(cur.expect("name", "state name"))
    return names


def parse_model(text: str) -> ContactModel:
    """Parse a model description; rule order follows the source."""
    states: list[str] | None = None
    indep: list[IndependentRule] = []
    contact: list[ContactRule] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        stripped = line.lstrip()
        if stripped.startswith("states"):
            head = len(line) - len(stripped)
            rest = stripped[len("states"):]
            if rest.lstrip().startswith(":"):
                if states is not None:
                    raise ModelParseError("second 'states:' header", lineno, head + 1)
                if indep or contact:
                    raise ModelParseError("'states:' header must come before rules", lineno, head + 1)
                states = _parse_header(line, lineno)
                continue
        if states is None:
            raise ModelParseError("missing 'states:' header before first rule", lineno, 1)
        rule = _parse_rule(line, lineno, states)
        (contact if isinstance(rule, ContactRule) else indep).append(rule)

    if states is None:
        raise ModelParseError("empty model: no 'states:' header")
    if not indep and not contact:
        raise ModelParseError("model has no rules")
    return ContactModel(StateSpace(tuple(states)), tuple(indep), tuple(contact))


def _parse_header(line: str, lineno: int) -> list[str]:
    cur = _Cursor(_tokenize(line, lineno), lineno, len(line))
    cur.expect("name", "'states'")
    cur.expect("colon", "':'")
    names = []
    seen = set()
    while True:
        name, col = cur.expect("name", "state name")
        if name in seen:
            raise ModelParseError(f"duplicate state {name!r}", lineno, col)
        seen.add(name)
        names.append(name)
        if cur.peek() != "comma":
            break
        cur.i += 1
    cur.done()
    if len(names) < 2:
        raise ModelParseError("at least two states are required", lineno, 1)
    return names


def _parse_rule(line: str, lineno: int, states: list[str]):
    cur = _Cursor(_tokenize(line, lineno), lineno, len(line))
    lhs = _parse_side(cur)
    cur.expect("arrow", "'->'")
    rhs = _parse_side(cur)
    cur.expect("colon", "':'")
    rate_text, rate_col = cur.expect("number", "rate")
    cur.done()

    def idx(name_col):
        name, col = name_col
        if name not in states:
            raise ModelParseError(f"unknown state {name!r}", lineno, col)
        return states.index(name)

    rate = float(rate_text)
    if rate < 0:
        raise ModelParseError(f"negative rate {rate_text}", lineno, rate_col)
    if not math.isfinite(rate):
        raise ModelParseError(f"rate must be finite, got {rate_text}", lineno, rate_col)

    if len(lhs) != len(rhs):
        raise ModelParseError("both sides of a rule must have the same number of nodes", lineno, rhs[0][1])
    a, b = idx(lhs[0]), idx(rhs[0])
    if len(lhs) == 1:
        if a == b:
            raise ModelParseError("independent rule does not change the state", lineno, rhs[0][1])
        return IndependentRule(a, b, rate)
    ctx_l, ctx_r = idx(lhs[1]), idx(rhs[1])
    if ctx_l != ctx_r:
        raise ModelParseError(
            "context (second) node must keep its state in a contact rule", lineno, rhs[1][1]
        )
    if a == b:
        raise ModelParseError("contact rule does not change the first node", lineno, rhs[0][1])
    return ContactRule(a, b, ctx_l, rate)


def load_model(path) -> ContactModel:
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())


def format_model(model: ContactModel) -> str:
    """Serialize to the textual form accepted by :func:`parse_model`."""
    s = model.states
    lines = ["states: " + ", ".join(s)]
    for r in model.contact:
        ctx = s[r.context_state]
        lines.append(f"{s[r.from_state]} + {ctx} -> {s[r.to_state]} + {ctx} : {r.rate!r}")
    for r in model.independent:
        lines.append(f"{s[r.from_state]} -> {s[r.to_state]} : {r.rate!r}")
    return "\n".join(lines) + "\n"
