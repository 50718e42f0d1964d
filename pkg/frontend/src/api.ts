// Thin HTTP helpers over the engine's POST endpoints. Errors come back as
// {error} payloads with non-2xx statuses; callers surface them verbatim.

import type { ClarificationQuestionWire, SessionInfo } from "./protocol.js";

export class ApiError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
  }
}

async function post(path: string, body: unknown): Promise<Record<string, unknown>> {
  const response = await fetch(path, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body ?? {}),
  });
  const payload = (await response.json().catch(() => ({}))) as Record<string, unknown>;
  if (!response.ok) {
    throw new ApiError(String(payload.error ?? `HTTP ${response.status}`), response.status);
  }
  return payload;
}

export function submitCommand(text: string) {
  return post("/api/director/commands", { text });
}

export function submitFraming(text: string): Promise<{
  profile: Record<string, unknown>;
  questions: ClarificationQuestionWire[];
}> {
  return post("/api/dramaturgy", { text }) as Promise<{
    profile: Record<string, unknown>;
    questions: ClarificationQuestionWire[];
  }>;
}

export function answerClarification(question: ClarificationQuestionWire, answer: string) {
  return post("/api/dramaturgy/clarify", { question, answer });
}

export function annotate(exchange: string, annotation: string, note?: string) {
  return post("/api/annotations", { exchange, annotation, note: note || null });
}

export function consolidate() {
  return post("/api/score/consolidate", {});
}

export function startReplay(session: string) {
  return post("/api/replay", { session });
}

export async function listSessions(): Promise<SessionInfo[]> {
  const response = await fetch("/api/sessions");
  const payload = (await response.json()) as { sessions: SessionInfo[] };
  return payload.sessions;
}
