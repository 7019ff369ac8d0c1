/** Typed client for the oracle bridge. Uses fetch only, so the same code
 * runs in the browser and under node-based tests. */

import type { AnswerAck, EngineEvent, PendingQuery, TraceRecord } from "./types.js";

export class BridgeHttpError extends Error {
  constructor(
    readonly status: number,
    readonly body: string,
  ) {
    super(`bridge returned ${status}: ${body}`);
  }
}

export class BridgeClient {
  constructor(readonly baseUrl: string) {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await fetch(this.baseUrl + path, init);
    const text = await res.text();
    if (!res.ok) throw new BridgeHttpError(res.status, text);
    return JSON.parse(text) as T;
  }

  pending(): Promise<PendingQuery[]> {
    return this.json<PendingQuery[]>("/queries/pending");
  }

  answer(queryId: string, label: number | boolean): Promise<AnswerAck> {
    return this.json<AnswerAck>(`/queries/${encodeURIComponent(queryId)}/answer`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ label }),
    });
  }

  async trace(episodeId: string): Promise<TraceRecord[]> {
    const res = await fetch(
      `${this.baseUrl}/episodes/${encodeURIComponent(episodeId)}/trace`,
    );
    const text = await res.text();
    if (!res.ok) throw new BridgeHttpError(res.status, text);
    return text
      .split("\n")
      .filter((line) => line.trim().length > 0)
      .map((line) => JSON.parse(line) as TraceRecord);
  }

  /** Subscribe to /events. Resolves once the stream ends; the caller loops
   * and reconnects. Keepalive comments are skipped per the SSE spec. */
  async streamEvents(
    onEvent: (ev: EngineEvent) => void,
    signal?: AbortSignal,
  ): Promise<void> {
    const res = await fetch(`${this.baseUrl}/events`, { signal });
    if (!res.ok || res.body === null) {
      throw new BridgeHttpError(res.status, "event stream unavailable");
    }
    const reader = res.body.getReader();
    const decoder = new TextDecoder("utf-8");
    let buffer = "";
    for (;;) {
      const { done, value } = await reader.read();
      if (done) return;
      buffer += decoder.decode(value, { stream: true });
      let sep;
      while ((sep = buffer.indexOf("\n\n")) >= 0) {
        const frame = buffer.slice(0, sep);
        buffer = buffer.slice(sep + 2);
        for (const ev of parseSseFrame(frame)) onEvent(ev);
      }
    }
  }
}

export function parseSseFrame(frame: string): EngineEvent[] {
  const events: EngineEvent[] = [];
  for (const line of frame.split("\n")) {
    if (!line.startsWith("data:")) continue; // comments / keepalives
    const payload = line.slice(5).trim();
    if (payload.length === 0) continue;
    events.push(JSON.parse(payload) as EngineEvent);
  }
  return events;
}
