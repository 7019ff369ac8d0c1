/** Pure state transitions for the console. All DOM-free so the scripted
 * session tests drive exactly the logic the browser runs. */

import type {
  AnswerAck,
  AppState,
  EngineEvent,
  PendingQuery,
  QueryCard,
  QueryKind,
  TraceRecord,
} from "./types.js";

export interface LabelCheck {
  ok: boolean;
  label?: number | boolean;
  message?: string;
}

/** Client-side validation mirroring the bridge's kind contract: hop answers
 * are integers in [1, hMax], the other kinds are strict booleans. */
export function validateLabel(
  kind: QueryKind,
  raw: string | number | boolean,
  hMax: number,
): LabelCheck {
  if (kind === "hop_depth") {
    const n = typeof raw === "number" ? raw : Number(String(raw).trim());
    if (!Number.isInteger(n)) return { ok: false, message: "hop depth must be an integer" };
    if (n < 1 || n > hMax) {
      return { ok: false, message: `hop depth must be between 1 and ${hMax}` };
    }
    return { ok: true, label: n };
  }
  if (typeof raw === "boolean") return { ok: true, label: raw };
  if (raw === "yes" || raw === "true") return { ok: true, label: true };
  if (raw === "no" || raw === "false") return { ok: true, label: false };
  return { ok: false, message: "answer must be yes or no" };
}

function findCard(state: AppState, queryId: string): QueryCard | undefined {
  return state.cards.find((c) => c.query.query_id === queryId);
}

/** Fold a fresh GET /queries/pending result into the card list. Unknown
 * queries become open cards; open cards that vanished server-side without an
 * ack expired (answered elsewhere or timed out). Answered cards stay as
 * disabled history. */
export function reconcilePending(
  state: AppState,
  pending: PendingQuery[],
  now: number,
): AppState {
  const live = new Set(pending.map((q) => q.query_id));
  const cards = state.cards.map((c) => {
    if (c.status === "open" && !live.has(c.query.query_id)) {
      return { ...c, status: "expired" as const };
    }
    return c;
  });
  for (const q of pending) {
    if (!findCard({ ...state, cards }, q.query_id)) {
      cards.push({ query: q, seenAt: now, status: "open" });
    }
  }
  return { ...state, connection: "ok", cards };
}

export function markSubmitting(state: AppState, queryId: string): AppState {
  return {
    ...state,
    cards: state.cards.map((c) =>
      c.query.query_id === queryId && c.status === "open"
        ? { ...c, status: "submitting" as const, error: undefined }
        : c,
    ),
  };
}

export function applyAck(state: AppState, ack: AnswerAck): AppState {
  return {
    ...state,
    cards: state.cards.map((c) =>
      c.query.query_id === ack.query_id
        ? { ...c, status: "answered" as const, answered: ack }
        : c,
    ),
  };
}

/** A rejected submission reopens the card with an inline error. */
export function applySubmitError(
  state: AppState,
  queryId: string,
  message: string,
): AppState {
  return {
    ...state,
    cards: state.cards.map((c) =>
      c.query.query_id === queryId && c.status === "submitting"
        ? { ...c, status: "open" as const, error: message }
        : c,
    ),
  };
}

export function markConnectionLost(state: AppState): AppState {
  return { ...state, connection: "lost" };
}

function episodeAt(state: AppState, episodeId: string): AppState {
  if (state.episodes.some((e) => e.episodeId === episodeId)) return state;
  return {
    ...state,
    episodes: [
      ...state.episodes,
      { episodeId, records: [], closed: false },
    ],
  };
}

function appendRecord(state: AppState, episodeId: string, record: TraceRecord): AppState {
  const base = episodeAt(state, episodeId);
  return {
    ...base,
    episodes: base.episodes.map((e) =>
      e.episodeId === episodeId ? { ...e, records: [...e.records, record] } : e,
    ),
  };
}

export function applyEvent(state: AppState, ev: EngineEvent, now: number): AppState {
  switch (ev.event) {
    case "query": {
      if (!ev.query || findCard(state, ev.query.query_id)) return state;
      return {
        ...state,
        cards: [...state.cards, { query: ev.query, seenAt: now, status: "open" }],
      };
    }
    case "answer": {
      if (ev.query_id === undefined || ev.label === undefined) return state;
      const ack: AnswerAck = {
        query_id: ev.query_id,
        label: ev.label,
        source: ev.source ?? "unknown",
      };
      const withCard = applyAck(state, ack);
      return { ...withCard, answerLog: [...withCard.answerLog, ack] };
    }
    case "episode_start":
      return ev.episode_id ? episodeAt(state, ev.episode_id) : state;
    case "trace":
      return ev.episode_id && ev.record
        ? appendRecord(state, ev.episode_id, ev.record)
        : state;
    case "episode_end": {
      if (!ev.episode_id) return state;
      const base = episodeAt(state, ev.episode_id);
      return {
        ...base,
        episodes: base.episodes.map((e) =>
          e.episodeId === ev.episode_id
            ? { ...e, closed: true, finalAnswer: ev.answer, correct: ev.correct }
            : e,
        ),
      };
    }
    default:
      return state;
  }
}

/** Trace panels are append-only and ordered by step; rollout bursts share a
 * step, so ordering is checked pairwise non-decreasing. */
export function traceOrdered(records: TraceRecord[]): boolean {
  for (let i = 1; i < records.length; i++) {
    const prev = records[i - 1];
    const cur = records[i];
    if (prev !== undefined && cur !== undefined && cur.step < prev.step) return false;
  }
  return true;
}

export function remainingMs(card: QueryCard, timeoutMs: number, now: number): number {
  return Math.max(0, card.seenAt + timeoutMs - now);
}

/** Human-readable question line for a card. */
export function renderQuestion(q: PendingQuery): string {
  const question = q.payload.question_tokens.join(" ");
  switch (q.kind) {
    case "hop_depth":
      return `How many hops does "${question}" need?`;
    case "relation_relevance":
      return `Is relation r${q.payload.relation} relevant to "${question}"?`;
    case "path_validity":
      return `Does this path answer "${question}"?`;
  }
}

/** Labeled chain for the context panel, e.g. "#3 -r2-> #17 -r0-> #40". */
export function renderPathChain(path: [number, number, number][]): string {
  if (path.length === 0) return "(empty path)";
  const first = path[0];
  if (first === undefined) return "(empty path)";
  let out = `#${first[0]}`;
  for (const [, r, t] of path) out += ` -r${r}-> #${t}`;
  return out;
}
