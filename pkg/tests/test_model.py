import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import MIXED, RUMOR, SIR, SIIIR
from netlump.errors import ModelParseError, ValidationError
from netlump.meanfield import rule_index
from netlump.model import ContactModel, ContactRule, IndependentRule, StateSpace, format_model, parse_model


def test_parse_sir():
    m = parse_model(SIR)
    assert m.states == ("S", "I", "R")
    assert m.contact == (ContactRule(0, 1, 1, 6.0),)
    assert m.independent == (IndependentRule(1, 2, 4.0), IndependentRule(2, 0, 1.0))


def test_zero_rate_allowed():
    m = parse_model("states: A, B\nA -> B : 0.0")
    assert m.independent[0].rate == 0.0


def test_comments_and_blank_lines():
    m = parse_model("# header\nstates: A, B  # two\n\n  A->B:1.5 # spontaneous\n")
    assert m.independent == (IndependentRule(0, 1, 1.5),)


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("states: S, I\nS + I -> I + S : 1.0", "context"),
        ("states: S, I\nS + I -> I + I : -1", "negative"),
        ("states: S, I\nS -> Q : 1", "unknown state"),
        ("states: S, S\nS -> S : 1", "duplicate"),
        ("states: S, I\nS -> S : 1", "change"),
        ("states: S, I\nS + I -> I : 1", ""),
        ("states: S, I\n", "no rules"),
        ("S -> I : 1", "states"),
        ("states: S, I\nS -> I : inf", ""),
        ("states: S, I\nS -> I 1", ""),
    ],
)
def test_parse_errors(text, fragment):
    with pytest.raises(ModelParseError) as err:
        parse_model(text)
    assert fragment.lower() in str(err.value).lower()
    if fragment != "no rules":
        assert err.value.line is not None


def test_error_reports_column():
    with pytest.raises(ModelParseError) as err:
        parse_model("states: S, I\nS -> Q : 1")
    assert err.value.line == 2 and err.value.column == 6


def test_rule_index_sir():
    ix = rule_index(parse_model(SIR))
    S, I, R = 0, 1, 2
    assert ix.contact_gain[I] == (0,)
    assert ix.contact_loss[S] == (0,)
    assert ix.indep_transition[(I, R)] == (0,)
    assert ix.contact_gain[S] == () and ix.contact_gain[R] == ()


def test_rule_index_without_contact_rules():
    ix = rule_index(parse_model("states: A, B\nA -> B : 1\nB -> A : 2"))
    assert all(g == () for g in ix.contact_gain)
    assert all(l == () for l in ix.contact_loss)
    assert ix.contact_transition == {}


@pytest.mark.parametrize("text", [SIR, RUMOR, SIIIR, MIXED])
def test_rule_index_membership_exhaustive(text):
    m = parse_model(text)
    ix = rule_index(m)
    for s in range(m.n_states):
        assert set(ix.indep_gain[s]) == {i for i, r in enumerate(m.independent) if r.to_state == s}
        assert set(ix.indep_loss[s]) == {i for i, r in enumerate(m.independent) if r.from_state == s}
        assert set(ix.contact_gain[s]) == {i for i, r in enumerate(m.contact) if r.to_state == s}
        assert set(ix.contact_loss[s]) == {i for i, r in enumerate(m.contact) if r.from_state == s}
    # partition property
    assert sum(map(len, ix.indep_gain)) == sum(map(len, ix.indep_loss)) == len(m.independent)
    assert sum(map(len, ix.contact_gain)) == sum(map(len, ix.contact_loss)) == len(m.contact)
    assert sum(map(len, ix.contact_transition.values())) == len(m.contact)


def test_rumor_recovered_gain_set():
    m = parse_model(RUMOR)
    ix = rule_index(m)
    R = m.state_space.index("R")
    gained = {(m.states[m.contact[i].from_state], m.states[m.contact[i].context_state]) for i in ix.contact_gain[R]}
    assert gained == {("S", "R"), ("S", "S")}


def test_duplicate_rules_kept():
    m = parse_model("states: A, B\nA -> B : 1\nA -> B : 2")
    assert len(m.independent) == 2
    assert rule_index(m).i_pair_rate[0, 1] == 3.0


def test_model_is_hashable_and_immutable():
    m = parse_model(SIR)
    assert hash(m) == hash(parse_model(SIR))
    with pytest.raises(AttributeError):
        m.contact = ()


_names = st.lists(st.from_regex(r"[A-Za-z_][A-Za-z0-9_]{0,4}", fullmatch=True), min_size=2, max_size=4, unique=True)


@st.composite
def models(draw):
    names = tuple(draw(_names))
    n = len(names)
    rate = st.floats(min_value=0, max_value=100, allow_nan=False, allow_infinity=False)
    pair = st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)).filter(lambda t: t[0] != t[1])
    indep = [IndependentRule(a, b, draw(rate)) for a, b in draw(st.lists(pair, max_size=4))]
    contact = [ContactRule(a, b, draw(st.integers(0, n - 1)), draw(rate)) for a, b in draw(st.lists(pair, max_size=4))]
    if not indep and not contact:
        indep = [IndependentRule(0, 1, 1.0)]
    return ContactModel(StateSpace(names), tuple(indep), tuple(contact))


@settings(max_examples=100, deadline=None)
@given(models())
def test_round_trip(m):
    assert parse_model(format_model(m)) == m


def test_state_space_validation():
    with pytest.raises(ValidationError):
        StateSpace(("A",))
