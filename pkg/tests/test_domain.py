"""Value semantics, canonical ordering, and serialization round-trips."""

import json

import pytest
from hypothesis import given, strategies as st

from trajsim.domain import (
    EMPTY,
    Action,
    ActionKind,
    DiagnosisEntry,
    DiagnosticProfile,
    EmptyOutcome,
    Episode,
    Event,
    EventSet,
    LabelOutcome,
    NumericOutcome,
    PatientState,
    StaticProfile,
    canonicalize_code,
    dumps_canonical,
    episode_from_json,
    episode_to_json,
    event_set_from_dict,
    event_set_to_dict,
    validate_episode,
)
from trajsim.errors import EmptyCodeError


# --- codes -----------------------------------------------------------------


def test_code_canonicalization_collapses_whitespace_and_case():
    assert canonicalize_code("  Serum   SODIUM ") == "serum sodium"


def test_code_canonicalization_rejects_blank():
    with pytest.raises(EmptyCodeError):
        canonicalize_code("   ")


def test_actions_with_equivalent_codes_are_equal():
    a = Action(ActionKind.INQUIRY, "Sodium")
    b = Action(ActionKind.INQUIRY, "  sodium ")
    assert a == b
    assert hash(a) == hash(b)


def test_action_display_name_changes_value_but_not_identity():
    a = Action(ActionKind.INQUIRY, "sodium", display_name="Na+")
    b = Action(ActionKind.INQUIRY, "sodium", display_name="Serum sodium")
    # different values for round-trip purposes, same order for matching
    assert a != b
    assert a.identity() == b.identity()
    assert hash(a) == hash(b)


def test_action_detail_affects_identity():
    a = Action(ActionKind.INTERVENTION, "saline", detail={"dose": "500ml"})
    b = Action(ActionKind.INTERVENTION, "saline", detail={"dose": "1000ml"})
    assert a != b


def test_label_outcome_values_are_canonicalized():
    out = LabelOutcome(frozenset(["  E. Coli ", "growth"]))
    assert out.values == frozenset(["e. coli", "growth"])


# --- event sets -------------------------------------------------------------


def make_set(ts, *events):
    return EventSet(timestamp=ts, events=tuple(events))


def test_event_set_sorts_events_canonically():
    e1 = Event(Action(ActionKind.INQUIRY, "sodium"), NumericOutcome(140.0, "mEq/L"))
    e2 = Event(Action(ActionKind.INTERVENTION, "saline"), EMPTY)
    e3 = Event(Action(ActionKind.INQUIRY, "lactate"), NumericOutcome(1.5, "mmol/L"))
    a = make_set(10, e1, e2, e3)
    b = make_set(10, e3, e1, e2)
    assert a.events == b.events
    assert dumps_canonical(event_set_to_dict(a)) == dumps_canonical(event_set_to_dict(b))


def test_event_set_permutation_serializes_identically_repeatedly():
    events = [
        Event(Action(ActionKind.INQUIRY, f"code {i}"), NumericOutcome(float(i), "u"))
        for i in range(6)
    ]
    reference = dumps_canonical(event_set_to_dict(make_set(5, *events)))
    import itertools

    for perm in itertools.islice(itertools.permutations(events), 24):
        assert dumps_canonical(event_set_to_dict(make_set(5, *perm))) == reference


# --- episodes ----------------------------------------------------------------


def sample_episode():
    profile = StaticProfile(
        age=58,
        gender="male",
        allergies="none known",
        chief_complaint="chest pain",
        history_summary="prior stent",
    )
    diagnostics = DiagnosticProfile(
        primary=DiagnosisEntry(content="nstemi", reason="troponin rise"),
        secondary=(DiagnosisEntry(content="hypertension", reason="chronic"),),
    )
    timeline = (
        make_set(
            60,
            Event(Action(ActionKind.INQUIRY, "troponin"), NumericOutcome(0.4, "ng/mL")),
            Event(Action(ActionKind.INTERVENTION, "aspirin"), EMPTY),
        ),
        make_set(
            240,
            Event(Action(ActionKind.INQUIRY, "troponin"), NumericOutcome(0.9, "ng/mL")),
            Event(
                Action(ActionKind.INQUIRY, "blood culture"),
                LabelOutcome(frozenset(["no growth"])),
            ),
        ),
    )
    return Episode(
        subject_id="p1",
        admission_id="a1",
        profile=profile,
        diagnostics=diagnostics,
        timeline=timeline,
        length_of_stay=0.5,
    )


def test_episode_json_round_trip():
    ep = sample_episode()
    assert episode_from_json(episode_to_json(ep)) == ep


def test_episode_json_is_single_line_and_stable():
    line = episode_to_json(sample_episode())
    assert "\n" not in line
    assert episode_to_json(sample_episode()) == line
    json.loads(line)  # must be plain JSON


def test_validate_clean_episode():
    assert validate_episode(sample_episode()) == []


def test_validate_flags_intervention_with_value():
    ep = sample_episode()
    bad_set = make_set(
        300, Event(Action(ActionKind.INTERVENTION, "saline"), NumericOutcome(1.0, ""))
    )
    broken = Episode(
        subject_id=ep.subject_id,
        admission_id=ep.admission_id,
        profile=ep.profile,
        diagnostics=ep.diagnostics,
        timeline=ep.timeline + (bad_set,),
        length_of_stay=ep.length_of_stay,
    )
    assert any("intervention" in v and "Empty" in v for v in validate_episode(broken))


def test_validate_flags_nonincreasing_timeline():
    ep = sample_episode()
    dup = Episode(
        subject_id=ep.subject_id,
        admission_id=ep.admission_id,
        profile=ep.profile,
        diagnostics=ep.diagnostics,
        timeline=(ep.timeline[1], ep.timeline[0]),
        length_of_stay=ep.length_of_stay,
    )
    assert any("increasing" in v for v in validate_episode(dup))


def test_validate_flags_absurd_age():
    ep = sample_episode()
    broken = Episode(
        subject_id=ep.subject_id,
        admission_id=ep.admission_id,
        profile=StaticProfile(
            age=207,
            gender="",
            allergies="",
            chief_complaint="",
            history_summary="",
        ),
        diagnostics=ep.diagnostics,
        timeline=ep.timeline,
        length_of_stay=ep.length_of_stay,
    )
    assert any("age" in v for v in validate_episode(broken))


def test_validate_flags_short_length_of_stay():
    ep = sample_episode()
    broken = Episode(
        subject_id=ep.subject_id,
        admission_id=ep.admission_id,
        profile=ep.profile,
        diagnostics=ep.diagnostics,
        timeline=ep.timeline,
        length_of_stay=0.01,  # timeline runs to minute 240 = 1/6 day
    )
    assert validate_episode(broken)


# --- patient state -----------------------------------------------------------


def test_patient_state_is_immutable():
    ep = sample_episode()
    state = PatientState(
        now=0, profile=ep.profile, diagnostics=ep.diagnostics, history=()
    )
    with pytest.raises(Exception):
        state.now = 5


# --- property round-trips ------------------------------------------------------

code_st = st.text(
    alphabet="abcdefghijklmnopqrstuvwxyz0123456789 ", min_size=1, max_size=12
).filter(lambda s: s.strip())

outcome_st = st.one_of(
    st.builds(
        NumericOutcome,
        value=st.floats(
            min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False
        ),
        unit=st.sampled_from(["", "mEq/L", "mg/dL"]),
    ),
    st.builds(
        LabelOutcome,
        values=st.frozensets(code_st, min_size=1, max_size=3),
    ),
)

event_st = st.builds(
    lambda code, outcome: Event(Action(ActionKind.INQUIRY, code), outcome),
    code_st,
    outcome_st,
)


@given(st.lists(event_st, min_size=1, max_size=5), st.integers(0, 10_000))
def test_event_set_dict_round_trip(events, ts):
    original = EventSet(timestamp=ts, events=tuple(events))
    assert event_set_from_dict(event_set_to_dict(original)) == original


@given(st.lists(event_st, min_size=1, max_size=5))
def test_event_order_never_leaks_into_serialization(events):
    a = EventSet(timestamp=1, events=tuple(events))
    b = EventSet(timestamp=1, events=tuple(reversed(events)))
    assert dumps_canonical(event_set_to_dict(a)) == dumps_canonical(event_set_to_dict(b))


def test_empty_outcome_is_singleton_equal():
    assert EmptyOutcome() == EMPTY
