// Mirrored engine state plus local UI state. The mirror only ever changes
// when a server frame arrives (applyFrame); nothing in the console
// speculates about engine behaviour, which is what keeps it a pure view.

import type {
  Frame,
  HeatGridWire,
  HelloWire,
  ReplayProgressWire,
  RulesWire,
  ScoreWire,
  SnapshotWire,
  TraceWire,
} from "./protocol.js";

export interface ConsoleViewModel {
  connected: boolean;
  hello: HelloWire | null;
  snapshot: SnapshotWire | null;
  heatgrid: HeatGridWire | null;
  rules: RulesWire | null;
  score: ScoreWire | null;
  traces: TraceWire[];
  replay: ReplayProgressWire | null;
  lastResult: Record<string, unknown> | null;
  // local UI state
  selectedExchange: string | null;
  pendingCommand: string;
}

export function emptyViewModel(): ConsoleViewModel {
  return {
    connected: false,
    hello: null,
    snapshot: null,
    heatgrid: null,
    rules: null,
    score: null,
    traces: [],
    replay: null,
    lastResult: null,
    selectedExchange: null,
    pendingCommand: "",
  };
}

const TRACE_LIMIT = 200;

function insertTrace(traces: TraceWire[], trace: TraceWire): TraceWire[] {
  const next = traces.filter(
    (t) => !(t.exchange === trace.exchange && t.seq === trace.seq)
  );
  next.push(trace);
  // frames may arrive out of order; the feed displays in seq order
  next.sort((a, b) => (a.seq ?? 0) - (b.seq ?? 0));
  return next.slice(-TRACE_LIMIT);
}

/** Fold one server frame into the view model (returns the same object). */
export function applyFrame(vm: ConsoleViewModel, frame: Frame): ConsoleViewModel {
  switch (frame.frame) {
    case "hello":
      vm.hello = frame.data;
      // a reconnect resyncs everything; stale mirrors must not linger
      vm.traces = [];
      vm.replay = null;
      break;
    case "snapshot":
      vm.snapshot = frame.data;
      break;
    case "heatgrid":
      vm.heatgrid = frame.data;
      break;
    case "rules":
      vm.rules = frame.data;
      break;
    case "score":
      vm.score = frame.data;
      break;
    case "trace":
      vm.traces = insertTrace(vm.traces, frame.data);
      break;
    case "replay_progress":
      vm.replay = frame.data;
      break;
    case "result":
      vm.lastResult = frame.data;
      break;
  }
  return vm;
}

export function selectedTrace(vm: ConsoleViewModel): TraceWire | null {
  if (vm.selectedExchange === null) {
    return null;
  }
  return vm.traces.find((t) => t.exchange === vm.selectedExchange) ?? null;
}
