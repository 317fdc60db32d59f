"""Replay backend: answers straight from a recorded episode."""

import pytest

from trajsim.backends.replay import ReplayModel
from trajsim.domain import (
    EMPTY,
    Action,
    ActionKind,
    NumericOutcome,
    PatientState,
)
from trajsim.engine import RolloutMode, rollout
from trajsim.errors import PositionNotFoundError
from trajsim.metrics import extract_pairs


def state_for(episode, now, history):
    return PatientState(
        now=now,
        profile=episode.profile,
        diagnostics=episode.diagnostics,
        history=history,
    )


def test_replay_reproduces_each_recorded_outcome(small_corpus):
    episode = small_corpus[0]
    model = ReplayModel(episode)
    for index, event_set in enumerate(episode.timeline):
        state = state_for(episode, event_set.timestamp, episode.timeline[:index])
        actions = [e.action for e in event_set.events]
        outcomes = model.predict(state, actions)
        assert outcomes == [e.outcome for e in event_set.events]


def test_replay_rollout_scores_perfectly(small_corpus, range_table):
    episode = small_corpus[0]
    result = rollout(episode, ReplayModel(episode), RolloutMode.FULL_TRAJECTORY)
    assert result.predicted.timeline == episode.timeline


def test_replay_full_and_next_agree(small_corpus):
    episode = small_corpus[1]
    model = ReplayModel(episode)
    full = rollout(episode, model, RolloutMode.FULL_TRAJECTORY)
    nxt = rollout(episode, model, RolloutMode.NEXT_STEP)
    assert full.predicted == nxt.predicted


def test_replay_handles_repeated_identical_actions():
    from trajsim.domain import (
        DiagnosisEntry,
        DiagnosticProfile,
        Episode,
        Event,
        EventSet,
        StaticProfile,
    )

    # two identical inquiries in one set with different recorded outcomes:
    # answers must come back in recorded order, not collapse to one
    events = (
        Event(Action(ActionKind.INQUIRY, "x"), NumericOutcome(1.0, "")),
        Event(Action(ActionKind.INQUIRY, "x"), NumericOutcome(2.0, "")),
    )
    episode = Episode(
        subject_id="p",
        admission_id="a",
        profile=StaticProfile(1, "", "", "", ""),
        diagnostics=DiagnosticProfile(DiagnosisEntry("d", ""), ()),
        timeline=(EventSet(timestamp=5, events=events),),
        length_of_stay=1.0,
    )
    model = ReplayModel(episode)
    state = state_for(episode, 5, ())
    actions = [e.action for e in episode.timeline[0].events]
    outcomes = model.predict(state, actions)
    assert sorted(o.value for o in outcomes) == [1.0, 2.0]


def test_replay_unknown_position_raises(small_corpus):
    episode = small_corpus[0]
    model = ReplayModel(episode)
    state = state_for(episode, 999_999, ())
    with pytest.raises(PositionNotFoundError):
        model.predict(state, [Action(ActionKind.INQUIRY, "sodium")])


def test_replay_unknown_action_at_known_time_raises(small_corpus):
    episode = small_corpus[0]
    model = ReplayModel(episode)
    ts = episode.timeline[0].timestamp
    state = state_for(episode, ts, ())
    with pytest.raises(PositionNotFoundError):
        model.predict(state, [Action(ActionKind.INQUIRY, "never ordered")])
