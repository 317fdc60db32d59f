// Wire types for the trajsim service API. Field names mirror the JSON
// exactly; nothing here is computed locally.

export type ActionKind = "inquiry" | "intervention";

export interface WireAction {
  kind: ActionKind;
  code: string;
  display_name?: string;
  detail?: Record<string, unknown>;
}

export type WireOutcome =
  | { variant: "numeric"; value: number; unit: string }
  | { variant: "label"; values: string[] }
  | null; // interventions: state-altering, no value

export interface WireEvent {
  action: WireAction;
  outcome: WireOutcome;
}

export interface WireEventSet {
  timestamp: number;
  events: WireEvent[];
}

export interface Descriptor {
  id: string;
  created_at: number;
  backend: string;
  now: number;
  history_length: number;
  parent: [string, number] | null;
}

export interface SessionBody {
  descriptor: Descriptor;
  history: WireEventSet[];
}

export interface Healthz {
  status: string;
  backends: string[];
  sessions: number;
}

export interface CreateRequest {
  backend: string;
  profile: {
    age: number;
    gender?: string;
    allergies?: string;
    chief_complaint?: string;
    history_summary?: string;
  };
  diagnostics: {
    primary: { content: string; reason?: string };
    secondary?: { content: string; reason?: string }[];
  };
  seed?: number;
}

export interface StepRequest {
  at: number;
  actions: WireAction[];
}

export interface StepResponse {
  event_set: WireEventSet;
  descriptor: Descriptor;
}

// A ground-truth episode file, as written by the corpus tools. Only the
// timeline matters for reference coloring; extra fields are ignored.
export interface ReferenceEpisode {
  timeline: WireEventSet[];
  [key: string]: unknown;
}
