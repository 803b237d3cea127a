/**
 * Session client: talks the service wire protocol, keeps the acknowledged
 * event log, and re-renders strictly in sequence order. The client never
 * advances game state on its own; the board view is always a replay of
 * acknowledged events (or a server snapshot on reconnect).
 */

import { encodeRaster } from "./raster.js";
import type {
  CreateResponse, EventsResponse, RasterResponse, SessionEvent, Snapshot,
} from "./types.js";
import { GRID_LOCATIONS } from "./types.js";

export interface Transport {
  post(path: string, body: unknown): Promise<unknown>;
  get(path: string): Promise<unknown>;
}

export class HttpError extends Error {
  constructor(readonly status: number, readonly detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export class HttpTransport implements Transport {
  constructor(private readonly baseUrl: string,
              private readonly fetchFn: typeof fetch = fetch) {}

  private async run(path: string, init?: RequestInit): Promise<unknown> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    const body = await response.json().catch(() => ({}));
    if (!response.ok) {
      const detail = (body as { detail?: string }).detail ?? response.statusText;
      throw new HttpError(response.status, String(detail));
    }
    return body;
  }

  post(path: string, body: unknown): Promise<unknown> {
    return this.run(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  get(path: string): Promise<unknown> {
    return this.run(path);
  }
}

export type EventHandler = (event: SessionEvent) => void;

export class SessionClient {
  sessionId: string | null = null;
  lastSeq = 0;
  readonly events: SessionEvent[] = [];
  private readonly pending = new Map<number, SessionEvent>();

  constructor(private readonly transport: Transport,
              private readonly onEvent: EventHandler) {}

  /** Apply a batch in seq order, buffering gaps, dropping duplicates. */
  private apply(batch: SessionEvent[]): void {
    for (const event of batch) {
      if (event.seq > this.lastSeq && !this.pending.has(event.seq)) {
        this.pending.set(event.seq, event);
      }
    }
    for (;;) {
      const next = this.pending.get(this.lastSeq + 1);
      if (!next) {
        break;
      }
      this.pending.delete(next.seq);
      this.lastSeq = next.seq;
      this.events.push(next);
      this.onEvent(next);
    }
  }

  async createSession(): Promise<string> {
    const body = (await this.transport.post("/sessions", {})) as CreateResponse;
    this.sessionId = body.session_id;
    this.apply(body.events);
    return body.session_id;
  }

  private requireSession(): string {
    if (!this.sessionId) {
      throw new Error("no session; call createSession() first");
    }
    return this.sessionId;
  }

  async sendUtterance(text: string): Promise<void> {
    const sid = this.requireSession();
    const body = (await this.transport.post(`/sessions/${sid}/utterance`,
                                            { text })) as EventsResponse;
    this.apply(body.events);
  }

  /** One debounce tick; resolves to true when the drawing commits. */
  async submitRasterTick(cell: number, raster: Uint8Array): Promise<boolean> {
    const sid = this.requireSession();
    const body = (await this.transport.post(`/sessions/${sid}/raster`, {
      cell,
      pixels: encodeRaster(raster),
    })) as RasterResponse;
    this.apply(body.events);
    return body.committed;
  }

  async poll(): Promise<void> {
    const sid = this.requireSession();
    const body = (await this.transport.get(
      `/sessions/${sid}/events?from=${this.lastSeq}`)) as EventsResponse;
    this.apply(body.events);
  }

  async snapshot(): Promise<Snapshot> {
    const sid = this.requireSession();
    return (await this.transport.get(`/sessions/${sid}`)) as Snapshot;
  }

  /** Reconnect: refetch everything after the last event we rendered. */
  async resume(): Promise<Snapshot> {
    const snapshot = await this.snapshot();
    await this.poll();
    return snapshot;
  }

  /** Board replayed purely from acknowledged move events. */
  boardFromEvents(): string[] {
    const cells = new Array<string>(9).fill(".");
    for (const event of this.events) {
      if (event.kind === "move") {
        const where = String(event.payload.where);
        const index = GRID_LOCATIONS.indexOf(where as never);
        if (index >= 0) {
          cells[index] = String(event.payload.symbol) === "circle" ? "o" : "x";
        }
      }
    }
    return cells;
  }

  get closed(): boolean {
    return this.events.some((e) => e.kind === "closed");
  }

  /** Who holds the floor according to the newest turn event. */
  turnOwner(): "user" | "agent" {
    for (let i = this.events.length - 1; i >= 0; i--) {
      if (this.events[i].kind === "turn") {
        return this.events[i].payload.owner as "user" | "agent";
      }
    }
    return "agent";
  }
}
