// The reasoning-trace feed: seq-ordered entries with validation outcomes,
// stale/re-prompt flags, and worked / needs-adjustment annotation buttons.

import { annotate } from "./api.js";
import type { ActionWire, TraceWire } from "./protocol.js";
import type { ConsoleViewModel } from "./viewmodel.js";

function describeAction(action: ActionWire): string {
  if (action.kind === "relay") {
    return `${action.actuator}: relay ${action.on ? "on" : "off"}`;
  }
  const parts: string[] = [];
  if (action.on !== null && action.on !== undefined) parts.push(action.on ? "on" : "off");
  if (action.bri != null) parts.push(`bri ${action.bri}`);
  if (action.hue != null) parts.push(`hue ${action.hue}`);
  if (action.sat != null) parts.push(`sat ${action.sat}`);
  if (action.transition_ms != null) parts.push(`${action.transition_ms}ms`);
  return `${action.actuator}: ${parts.join(", ")}`;
}

function flags(trace: TraceWire): string[] {
  const out: string[] = [];
  if (trace.stale) out.push("stale");
  if (trace.corrective_reprompt) out.push("re-prompted");
  if (trace.unattributed_speech) out.push("unattributed speech");
  if (trace.provider_error) out.push("provider failed");
  if (trace.rule_id) out.push(`rule ${trace.rule_id}`);
  return out;
}

export function renderTraceFeed(
  container: HTMLElement,
  vm: ConsoleViewModel,
  onSelect: (exchange: string) => void,
  onAnnotated: (message: string) => void
): void {
  container.replaceChildren();
  for (const trace of [...vm.traces].reverse()) {
    const entry = document.createElement("div");
    entry.className = "trace";
    if (vm.selectedExchange === trace.exchange) entry.classList.add("selected");
    entry.dataset.exchange = trace.exchange;

    const head = document.createElement("div");
    head.className = "trace-head";
    head.textContent = `#${trace.seq ?? "?"} ${trace.exchange} @ ${(trace.t / 1000).toFixed(1)}s  ${trace.event_line}`;
    entry.appendChild(head);

    if (trace.reasoning) {
      const why = document.createElement("div");
      why.className = "trace-reasoning";
      why.textContent = trace.reasoning;
      entry.appendChild(why);
    }
    if (trace.provider_error) {
      const err = document.createElement("div");
      err.className = "trace-error";
      err.textContent = trace.provider_error;
      entry.appendChild(err);
    }

    for (const outcome of trace.outcomes) {
      const line = document.createElement("div");
      line.className = `trace-action ${outcome.result}`;
      const detail = outcome.detail.length ? ` (${outcome.detail.join("; ")})` : "";
      line.textContent = `${outcome.result}: ${describeAction(outcome.action)}${detail}`;
      entry.appendChild(line);
    }

    const badges = flags(trace);
    if (badges.length) {
      const badgeRow = document.createElement("div");
      badgeRow.className = "trace-flags";
      for (const badge of badges) {
        const b = document.createElement("span");
        b.className = "badge";
        b.textContent = badge;
        badgeRow.appendChild(b);
      }
      entry.appendChild(badgeRow);
    }

    const controls = document.createElement("div");
    controls.className = "trace-controls";
    const note = document.createElement("input");
    note.placeholder = "note (optional)";
    const worked = document.createElement("button");
    worked.textContent = "worked";
    const adjust = document.createElement("button");
    adjust.textContent = "needs adjustment";
    const send = (annotation: string) => () => {
      annotate(trace.exchange, annotation, note.value)
        .then(() => onAnnotated(`${trace.exchange}: ${annotation}`))
        .catch((err) => {
          entry.classList.add("annotate-failed");
          onAnnotated(`annotation failed: ${err.message}`);
        });
    };
    worked.onclick = send("worked");
    adjust.onclick = send("needs_adjustment");
    controls.append(note, worked, adjust);
    entry.appendChild(controls);

    entry.onclick = (event) => {
      if ((event.target as HTMLElement).tagName !== "BUTTON" &&
          (event.target as HTMLElement).tagName !== "INPUT") {
        onSelect(trace.exchange);
      }
    };
    container.appendChild(entry);
  }
}
