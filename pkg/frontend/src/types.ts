/** Shapes mirrored from the engine's HTTP+JSON oracle bridge. */

export type QueryKind = "hop_depth" | "relation_relevance" | "path_validity";

export interface PendingQuery {
  query_id: string;
  kind: QueryKind;
  payload: {
    question_tokens: string[];
    relation?: number;
    path?: [number, number, number][];
  };
  issued_at: number;
}

export interface AnswerAck {
  query_id: string;
  label: number | boolean;
  source: string;
}

export interface TraceRecord {
  step: number;
  node_id: number;
  action: string | number;
  [extra: string]: unknown;
}

/** One message off the /events stream; `event` discriminates. */
export interface EngineEvent {
  event: "query" | "answer" | "episode_start" | "episode_end" | "trace";
  query?: PendingQuery;
  query_id?: string;
  label?: number | boolean;
  source?: string;
  episode_id?: string;
  record?: TraceRecord;
  answer?: string;
  correct?: boolean;
}

/** A pending query decorated with client-side presentation state. */
export interface QueryCard {
  query: PendingQuery;
  /** wall-clock ms when the client first saw the query */
  seenAt: number;
  status: "open" | "submitting" | "answered" | "expired";
  /** label echoed back by the engine once acked */
  answered?: AnswerAck;
  error?: string;
}

export interface EpisodeView {
  episodeId: string;
  records: TraceRecord[];
  finalAnswer?: string;
  correct?: boolean;
  closed: boolean;
}

export interface AppState {
  connection: "ok" | "lost";
  cards: QueryCard[];
  episodes: EpisodeView[];
  /** answers observed on the event stream, newest last */
  answerLog: AnswerAck[];
}

export function initialState(): AppState {
  return { connection: "ok", cards: [], episodes: [], answerLog: [] };
}
