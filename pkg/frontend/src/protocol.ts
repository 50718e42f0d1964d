// Wire types for the engine's /ws/console frames and HTTP payloads.
// The console mirrors engine state from these frames and never speculates.

export interface EntityWire {
  id: string;
  kind: "performer" | "audience" | "virtual";
  x: number;
  y: number;
  last_seen: number;
  label: string | null;
}

export interface LightWire {
  on: boolean;
  bri: number;
  hue: number;
  sat: number;
  transition_ms: number;
}

export interface SpeechWire {
  text: string;
  confidence: number;
  t: number;
  speaker: string | null;
  x: number | null;
  y: number | null;
}

export interface HotspotWire {
  col: number;
  row: number;
  heat: number;
  x?: number;
  y?: number;
}

export interface SnapshotWire {
  version: number;
  t: number;
  entities: EntityWire[];
  lights: Record<string, LightWire>;
  relays: Record<string, boolean>;
  recent_speech: SpeechWire[];
  hotspots: HotspotWire[];
  degraded: boolean;
}

export interface HeatGridWire {
  cols: number;
  rows: number;
  bounds: [number, number, number, number];
  cells: number[];
  hotspots: HotspotWire[];
}

export interface ZoneWire {
  id: string;
  name: string;
  shape:
    | { kind: "rectangle"; min: [number, number]; max: [number, number] }
    | { kind: "circle"; center: [number, number]; radius: number };
}

export interface ActuatorWire {
  id: string;
  kind: "light" | "relay";
  zone: string | null;
  bound: boolean;
}

export interface RulesWire {
  version: number;
  constraints: { description: string; source: string }[];
  rules: { id: string; description: string; enabled: boolean; source: string }[];
}

export interface ScoreWire {
  version: number;
  context_section: string;
  rules_section: string;
  distilled_notes: string[];
  profile: Record<string, unknown> | null;
}

export interface ActionWire {
  kind: "light" | "relay";
  actuator: string;
  on: boolean | null;
  bri?: number | null;
  hue?: number | null;
  sat?: number | null;
  transition_ms?: number;
}

export interface TraceWire {
  seq?: number;
  exchange: string;
  event_kind: string;
  event_line: string;
  prompt_hash: string;
  raw_reply: string;
  reasoning: string;
  outcomes: { action: ActionWire; result: string; detail: string[] }[];
  dispatched: ActionWire[];
  corrective_reprompt: boolean;
  stale: boolean;
  latency_ms: number;
  t: number;
  rule_id: string;
  provider_error: string;
  unattributed_speech: boolean;
}

export interface HelloWire {
  session: string;
  zones: ZoneWire[];
  actuators: ActuatorWire[];
  room: { width: number; height: number };
}

export interface ReplayProgressWire {
  session: string;
  t?: number;
  end?: number;
  done?: boolean;
  match?: boolean;
  [key: string]: unknown;
}

export type Frame =
  | { frame: "hello"; data: HelloWire }
  | { frame: "snapshot"; data: SnapshotWire }
  | { frame: "heatgrid"; data: HeatGridWire }
  | { frame: "rules"; data: RulesWire }
  | { frame: "score"; data: ScoreWire }
  | { frame: "trace"; data: TraceWire }
  | { frame: "replay_progress"; data: ReplayProgressWire }
  | { frame: "result"; data: Record<string, unknown> };

export interface ClarificationQuestionWire {
  id: string;
  text: string;
  field: string;
  options: string[] | null;
}

export interface SessionInfo {
  id: string;
  dir: string;
  entries: number;
  complete: boolean;
  active: boolean;
}
