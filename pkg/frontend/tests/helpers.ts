import type {
  WireAction,
  WireEvent,
  WireEventSet,
  WireOutcome,
} from "../src/types.js";

export function inquiry(code: string, value: number, unit = "mEq/L"): WireEvent {
  return {
    action: { kind: "inquiry", code },
    outcome: { variant: "numeric", value, unit },
  };
}

export function labelInquiry(code: string, values: string[]): WireEvent {
  return {
    action: { kind: "inquiry", code },
    outcome: { variant: "label", values },
  };
}

export function intervention(code: string): WireEvent {
  return { action: { kind: "intervention", code }, outcome: null };
}

export function eventSet(timestamp: number, ...events: WireEvent[]): WireEventSet {
  return { timestamp, events };
}

export function event(action: WireAction, outcome: WireOutcome): WireEvent {
  return { action, outcome };
}
