"""The outcome-model contract every backend implements."""

from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Sequence

from ..domain import Action, Outcome, PatientState


class OutcomeModel(ABC):
    """Produces one outcome per requested action, conditioned on patient state.

    Implementations must be safe to call concurrently from different
    sessions, return outcomes index-aligned with the action list, and map
    every intervention action to the empty outcome.
    """

    id: str = "model"
    capabilities: frozenset[str] = frozenset({"numeric", "label"})

    @abstractmethod
    def predict(
        self,
        state: PatientState,
        actions: Sequence[Action],
        *,
        session_seed: int = 0,
    ) -> list[Outcome]:
        """Predict outcomes for all actions issued at state.now.

        session_seed selects the per-session random substream for backends
        with stochastic output; deterministic backends ignore it.
        """
        raise NotImplementedError
