"""Open a simulated patient session, order some workup, and branch a what-if.

Run from the repository root:

    python3 demos/quickstart.py
"""

from trajsim.backends.oracle import OracleModel, default_oracle_config
from trajsim.domain import (
    Action,
    ActionKind,
    DiagnosisEntry,
    DiagnosticProfile,
    NumericOutcome,
    StaticProfile,
)
from trajsim.engine import Engine, StepRequest


def show(event_set):
    print(f"  t={event_set.timestamp:>4} min")
    for event in event_set.events:
        tag = event.action.kind.value
        name = event.action.display_name or event.action.code
        if isinstance(event.outcome, NumericOutcome):
            result = f"{event.outcome.value:.1f} {event.outcome.unit}".rstrip()
        else:
            result = "(administered)"
        print(f"    [{tag}] {name}: {result}")


def main():
    # A deterministic backend: latent analyte trajectories that relax toward
    # baseline and move when interventions land. noise_sigma=0 so reruns of
    # this script print identical numbers.
    engine = Engine(
        backends={"oracle": OracleModel(default_oracle_config(noise_sigma=0.0, seed=7))}
    )

    session = engine.init_session(
        profile=StaticProfile(
            age=67,
            gender="female",
            chief_complaint="palpitations since this morning",
        ),
        diagnostics=DiagnosticProfile(primary=DiagnosisEntry("new-onset tachycardia")),
        start=0,
        backend_ref="oracle",
        seed=2024,
    )
    print(f"session {session.id} opened at t=0\n")

    hr = Action(ActionKind.INQUIRY, "heart rate", display_name="heart rate")
    lactate = Action(ActionKind.INQUIRY, "lactate", display_name="serum lactate")
    beta_blocker = Action(
        ActionKind.INTERVENTION,
        "beta blocker",
        display_name="metoprolol",
        detail={"dose": "5 mg IV"},
    )

    print("baseline vitals and labs:")
    event_set, session = engine.step(session, StepRequest(at=60, actions=(hr, lactate)))
    show(event_set)

    print("\ndose metoprolol with a same-set recheck (one timestamp, one event set):")
    event_set, session = engine.step(session, StepRequest(at=240, actions=(beta_blocker, hr)))
    show(event_set)

    print("\nrecheck 8 hours later; the effect relaxes back toward baseline:")
    event_set, session = engine.step(session, StepRequest(at=720, actions=(hr,)))
    show(event_set)

    # Branching copies the first N event sets into a new session and leaves
    # the original untouched. Here: the same evening reading, in a timeline
    # where the afternoon dose never happened.
    branch = engine.branch(session, at_step=1)
    print(f"\nbranch {branch.id} from step 1 (before the dose), same evening check:")
    event_set, branch = engine.step(branch, StepRequest(at=720, actions=(hr,)))
    show(event_set)

    print(f"\noriginal session kept all {session.history_length} steps")


if __name__ == "__main__":
    main()
