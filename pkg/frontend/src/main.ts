// Console wiring: one WS mirror, panels for framing / commands / score /
// rules / trace feed / replay, and the canvas room view.

import {
  answerClarification,
  consolidate,
  listSessions,
  startReplay,
  submitCommand,
  submitFraming,
} from "./api.js";
import { renderRoomView } from "./roomview.js";
import { renderTraceFeed } from "./tracefeed.js";
import { ConsoleSocket } from "./ws.js";
import {
  applyFrame,
  emptyViewModel,
  selectedTrace,
  type ConsoleViewModel,
} from "./viewmodel.js";
import type { ClarificationQuestionWire, Frame } from "./protocol.js";

const vm: ConsoleViewModel = emptyViewModel();

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const canvas = el<HTMLCanvasElement>("room");
const statusBadge = el<HTMLSpanElement>("status");
const feed = el<HTMLDivElement>("feed");
const rulesPanel = el<HTMLDivElement>("rules");
const scorePanel = el<HTMLPreElement>("score");
const questionsPanel = el<HTMLDivElement>("questions");
const inspector = el<HTMLPreElement>("inspector");
const replayBar = el<HTMLDivElement>("replay-bar");

let dirty = true;
function markDirty() {
  dirty = true;
}

function renderRules() {
  rulesPanel.replaceChildren();
  if (!vm.rules) return;
  const addLine = (text: string, cls: string) => {
    const line = document.createElement("div");
    line.className = cls;
    line.textContent = text;
    rulesPanel.appendChild(line);
  };
  for (const constraint of vm.rules.constraints) {
    addLine(`- ${constraint.description}`, "constraint");
  }
  for (const rule of vm.rules.rules) {
    addLine(`- [${rule.id}] ${rule.description}${rule.enabled ? "" : " (disabled)"}`, "rule");
  }
  if (!vm.rules.constraints.length && !vm.rules.rules.length) {
    addLine("- (none)", "rule");
  }
}

function renderScore() {
  if (!vm.score) return;
  const notes = vm.score.distilled_notes.length
    ? vm.score.distilled_notes.map((n) => `- ${n}`).join("\n")
    : "- (no distilled notes)";
  scorePanel.textContent =
    `score v${vm.score.version}\n\n${vm.score.context_section}\n\n` +
    `${vm.score.rules_section}\n\n[DISTILLED NOTES]\n${notes}`;
}

function renderInspector() {
  const trace = selectedTrace(vm);
  if (!trace) {
    inspector.textContent = "(select a trace)";
    return;
  }
  inspector.textContent = JSON.stringify(trace, null, 2);
}

function renderReplay() {
  if (!vm.replay) {
    replayBar.textContent = "";
    return;
  }
  if (vm.replay.done) {
    replayBar.textContent = `replay ${vm.replay.session}: ` +
      (vm.replay.match ? "byte-identical" : "MISMATCH");
    return;
  }
  const t = Number(vm.replay.t ?? 0);
  const end = Number(vm.replay.end ?? 1);
  replayBar.textContent =
    `replaying ${vm.replay.session}  ${(t / 1000).toFixed(1)}s / ${(end / 1000).toFixed(1)}s`;
}

function onFrame(frame: Frame) {
  applyFrame(vm, frame);
  if (frame.frame === "rules") renderRules();
  if (frame.frame === "score") renderScore();
  if (frame.frame === "trace") {
    renderTraceFeed(feed, vm, selectExchange, setStatusNote);
  }
  if (frame.frame === "replay_progress") renderReplay();
  markDirty();
}

function selectExchange(exchange: string) {
  vm.selectedExchange = vm.selectedExchange === exchange ? null : exchange;
  renderTraceFeed(feed, vm, selectExchange, setStatusNote);
  renderInspector();
}

function setStatusNote(message: string) {
  el<HTMLSpanElement>("note").textContent = message;
}

const socket = new ConsoleSocket(
  `${location.protocol === "https:" ? "wss" : "ws"}://${location.host}/ws/console`,
  onFrame,
  (connected) => {
    vm.connected = connected;
    statusBadge.textContent = connected ? "connected" : "reconnecting";
    statusBadge.className = connected ? "ok" : "down";
  }
);
socket.connect();

function renderQuestions(questions: ClarificationQuestionWire[]) {
  questionsPanel.replaceChildren();
  for (const question of questions) {
    const row = document.createElement("div");
    row.className = "question";
    const label = document.createElement("div");
    label.textContent = question.text;
    const input = document.createElement("input");
    input.placeholder = question.options ? question.options.join(" | ") : "answer";
    const button = document.createElement("button");
    button.textContent = "answer";
    button.onclick = () => {
      answerClarification(question, input.value)
        .then(() => {
          row.remove();
          setStatusNote(`clarified ${question.field}`);
        })
        .catch((err) => setStatusNote(`clarification failed: ${err.message}`));
    };
    row.append(label, input, button);
    questionsPanel.appendChild(row);
  }
}

// framing panel: result renders from the server reply; errors keep the text
const framingInput = el<HTMLTextAreaElement>("framing-input");
el<HTMLButtonElement>("framing-send").onclick = () => {
  const text = framingInput.value;
  setStatusNote("interpreting framing...");
  submitFraming(text)
    .then((reply) => {
      setStatusNote("framing applied");
      renderQuestions(reply.questions);
      framingInput.value = "";
    })
    .catch((err) => setStatusNote(`framing failed: ${err.message}`));
};

// command panel: rule list refreshes from the rules broadcast, never locally
const commandInput = el<HTMLInputElement>("command-input");
const commandError = el<HTMLDivElement>("command-error");
el<HTMLButtonElement>("command-send").onclick = () => {
  const text = commandInput.value;
  vm.pendingCommand = text;
  commandError.textContent = "";
  submitCommand(text)
    .then((result) => {
      setStatusNote(`command accepted: ${String(result.kind)}`);
      commandInput.value = "";
      vm.pendingCommand = "";
    })
    .catch((err) => {
      commandError.textContent = err.message; // diagnostics verbatim
      commandInput.value = vm.pendingCommand; // preserved for retry
    });
};

el<HTMLButtonElement>("consolidate").onclick = () => {
  consolidate()
    .then((score) => setStatusNote(`consolidated score v${String(score.version)}`))
    .catch((err) => setStatusNote(`consolidation failed: ${err.message}`));
};

const sessionSelect = el<HTMLSelectElement>("sessions");
el<HTMLButtonElement>("sessions-refresh").onclick = () => {
  listSessions().then((sessions) => {
    sessionSelect.replaceChildren();
    for (const session of sessions) {
      if (session.active || !session.complete) continue; // replay wants closed runs
      const option = document.createElement("option");
      option.value = session.id;
      option.textContent = `${session.id} (${session.entries} entries)`;
      sessionSelect.appendChild(option);
    }
  });
};
el<HTMLButtonElement>("replay-start").onclick = () => {
  const session = sessionSelect.value;
  if (!session) return;
  startReplay(session)
    .then((result) =>
      setStatusNote(`replay ${result.match ? "matched" : "MISMATCHED"}`)
    )
    .catch((err) => setStatusNote(`replay failed: ${err.message}`));
};

function frameLoop() {
  if (dirty) {
    renderRoomView(canvas, vm);
    dirty = false;
  }
  requestAnimationFrame(frameLoop);
}
requestAnimationFrame(frameLoop);
