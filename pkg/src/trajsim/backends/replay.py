"""Backend that replays a recorded episode's own outcomes.

Feeding a rollout the episode it was recorded from must reproduce it
exactly, which makes this the identity oracle for metric plumbing.
"""

from __future__ import annotations

from collections import defaultdict
from typing import Sequence

from ..domain import Action, Episode, Outcome, PatientState
from ..errors import PositionNotFoundError
from .base import OutcomeModel


class ReplayModel(OutcomeModel):
    def __init__(self, source: Episode, model_id: str = "replay"):
        self.source = source
        self.id = model_id
        self.capabilities = frozenset({"numeric", "label"})
        # (timestamp, action identity) -> recorded outcomes, in timeline order.
        # A list tolerates repeated identical actions within one event set.
        self._index: dict[tuple[int, tuple], list[Outcome]] = defaultdict(list)
        for event_set in source.timeline:
            for event in event_set.events:
                key = (event_set.timestamp, event.action.identity())
                self._index[key].append(event.outcome)

    def predict(
        self,
        state: PatientState,
        actions: Sequence[Action],
        *,
        session_seed: int = 0,
    ) -> list[Outcome]:
        cursor: dict[tuple[int, tuple], int] = defaultdict(int)
        outcomes: list[Outcome] = []
        for action in actions:
            key = (state.now, action.identity())
            recorded = self._index.get(key)
            position = cursor[key]
            if recorded is None or position >= len(recorded):
                raise PositionNotFoundError(
                    f"no recorded outcome for {action.kind.value} "
                    f"{action.code!r} at t={state.now}"
                )
            outcomes.append(recorded[position])
            cursor[key] = position + 1
        return outcomes
