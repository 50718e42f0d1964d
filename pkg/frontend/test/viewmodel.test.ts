import { describe, expect, it } from "vitest";

import { applyFrame, emptyViewModel, selectedTrace } from "../src/viewmodel.js";
import type { Frame, RulesWire, TraceWire } from "../src/protocol.js";

function traceFrame(seq: number, exchange: string, reasoning = ""): Frame {
  const data: TraceWire = {
    seq,
    exchange,
    event_kind: "speech",
    event_line: 'Event: new speech: "How are you?"',
    prompt_hash: "h",
    raw_reply: "{}",
    reasoning,
    outcomes: [],
    dispatched: [],
    corrective_reprompt: false,
    stale: false,
    latency_ms: 3,
    t: seq * 100,
    rule_id: "",
    provider_error: "",
    unattributed_speech: false,
  };
  return { frame: "trace", data };
}

const RED_GREEN_RULES: RulesWire = {
  version: 2,
  constraints: [{ description: "Use only red and green light.", source: "use only red and green" }],
  rules: [],
};

describe("mirrored state", () => {
  it("updates only from server frames", () => {
    const vm = emptyViewModel();
    expect(vm.rules).toBeNull();
    applyFrame(vm, { frame: "rules", data: RED_GREEN_RULES });
    expect(vm.rules?.constraints[0].description).toBe("Use only red and green light.");
  });

  it("a result frame never touches the rules mirror (no local echo)", () => {
    const vm = emptyViewModel();
    applyFrame(vm, { frame: "rules", data: { version: 1, constraints: [], rules: [] } });
    applyFrame(vm, {
      frame: "result",
      data: { request: "command", kind: "constraint", description: "Use only red and green light." },
    });
    expect(vm.rules?.constraints).toEqual([]);
    expect(vm.lastResult?.kind).toBe("constraint");
  });

  it("submitting 'use only red and green' surfaces via the broadcast", () => {
    // the acceptance path: the palette entry appears when the rules frame lands
    const vm = emptyViewModel();
    applyFrame(vm, { frame: "rules", data: RED_GREEN_RULES });
    const lines = vm.rules!.constraints.map((c) => c.description);
    expect(lines).toContain("Use only red and green light.");
  });
});

describe("trace feed ordering", () => {
  it("keeps entries seq-ordered under out-of-order delivery", () => {
    const vm = emptyViewModel();
    applyFrame(vm, traceFrame(2, "x3"));
    applyFrame(vm, traceFrame(0, "x1"));
    applyFrame(vm, traceFrame(1, "x2"));
    expect(vm.traces.map((t) => t.exchange)).toEqual(["x1", "x2", "x3"]);
  });

  it("deduplicates redelivered frames", () => {
    const vm = emptyViewModel();
    applyFrame(vm, traceFrame(0, "x1"));
    applyFrame(vm, traceFrame(0, "x1"));
    expect(vm.traces).toHaveLength(1);
  });

  it("keeps the canonical reasoning text verbatim", () => {
    const vm = emptyViewModel();
    const reasoning =
      "A scared room meets the greeting with dim red light to express fear " +
      "while staying inside the allowed palette.";
    applyFrame(vm, traceFrame(0, "x1", reasoning));
    expect(vm.traces[0].reasoning).toContain("express fear");
  });

  it("caps the feed length", () => {
    const vm = emptyViewModel();
    for (let i = 0; i < 250; i++) {
      applyFrame(vm, traceFrame(i, `x${i}`));
    }
    expect(vm.traces).toHaveLength(200);
    expect(vm.traces[0].exchange).toBe("x50");
  });
});

describe("selection", () => {
  it("resolves the selected exchange", () => {
    const vm = emptyViewModel();
    applyFrame(vm, traceFrame(0, "x1", "why"));
    vm.selectedExchange = "x1";
    expect(selectedTrace(vm)?.reasoning).toBe("why");
    vm.selectedExchange = "ghost";
    expect(selectedTrace(vm)).toBeNull();
  });
});

describe("reconnect resync", () => {
  it("clears stale mirrors when a new hello arrives", () => {
    const vm = emptyViewModel();
    applyFrame(vm, traceFrame(0, "x1"));
    applyFrame(vm, {
      frame: "replay_progress",
      data: { session: "s", t: 100, end: 200 },
    });
    applyFrame(vm, {
      frame: "hello",
      data: {
        session: "s2",
        zones: [],
        actuators: [],
        room: { width: 10, height: 8 },
      },
    });
    expect(vm.traces).toEqual([]);
    expect(vm.replay).toBeNull();
    expect(vm.hello?.session).toBe("s2");
  });
});

describe("replay progress", () => {
  it("tracks progress then completion", () => {
    const vm = emptyViewModel();
    applyFrame(vm, { frame: "replay_progress", data: { session: "s", t: 100, end: 6000 } });
    expect(vm.replay?.t).toBe(100);
    applyFrame(vm, {
      frame: "replay_progress",
      data: { session: "s", done: true, match: true },
    });
    expect(vm.replay?.done).toBe(true);
    expect(vm.replay?.match).toBe(true);
  });
});
