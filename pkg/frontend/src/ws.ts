// Console socket: one connection, exponential backoff, full resync on
// reconnect (the server replays hello/snapshot/heatgrid/rules/score/traces).

import type { Frame } from "./protocol.js";

export class ConsoleSocket {
  private ws: WebSocket | null = null;
  private attempts = 0;
  private closed = false;

  constructor(
    private readonly url: string,
    private readonly onFrame: (frame: Frame) => void,
    private readonly onStatus: (connected: boolean) => void
  ) {}

  connect(): void {
    if (this.closed) return;
    this.ws = new WebSocket(this.url);
    this.ws.onopen = () => {
      this.attempts = 0;
      this.onStatus(true);
    };
    this.ws.onmessage = (event) => {
      try {
        this.onFrame(JSON.parse(event.data as string) as Frame);
      } catch {
        // a torn frame is the server's bug, not a reason to kill the console
      }
    };
    this.ws.onclose = () => {
      this.onStatus(false);
      this.reconnect();
    };
    this.ws.onerror = () => {
      this.ws?.close();
    };
  }

  private reconnect(): void {
    if (this.closed) return;
    const delay = Math.min(500 * 2 ** this.attempts, 10_000);
    this.attempts += 1;
    setTimeout(() => this.connect(), delay);
  }

  close(): void {
    this.closed = true;
    this.ws?.close();
  }
}
