import { describe, expect, it } from "vitest";

import {
  applyAck,
  applyEvent,
  applySubmitError,
  markSubmitting,
  reconcilePending,
  remainingMs,
  renderPathChain,
  renderQuestion,
  traceOrdered,
  validateLabel,
} from "../src/store.js";
import { initialState } from "../src/types.js";
import type { EngineEvent, PendingQuery } from "../src/types.js";

const hopQuery: PendingQuery = {
  query_id: "q1",
  kind: "hop_depth",
  payload: { question_tokens: ["anchor:e7", "rel:r2"] },
  issued_at: 0,
};

const relQuery: PendingQuery = {
  query_id: "q2",
  kind: "relation_relevance",
  payload: { question_tokens: ["anchor:e7", "rel:r2"], relation: 4 },
  issued_at: 1,
};

describe("validateLabel", () => {
  it("accepts hop depths inside [1, hMax]", () => {
    expect(validateLabel("hop_depth", "2", 4)).toEqual({ ok: true, label: 2 });
    expect(validateLabel("hop_depth", 4, 4)).toEqual({ ok: true, label: 4 });
  });

  it("rejects hop depths outside the range client-side", () => {
    expect(validateLabel("hop_depth", "0", 4).ok).toBe(false);
    expect(validateLabel("hop_depth", "5", 4).ok).toBe(false);
    expect(validateLabel("hop_depth", "2.5", 4).ok).toBe(false);
    expect(validateLabel("hop_depth", "abc", 4).ok).toBe(false);
  });

  it("maps boolean kinds to yes/no", () => {
    expect(validateLabel("relation_relevance", true, 4)).toEqual({ ok: true, label: true });
    expect(validateLabel("path_validity", "no", 4)).toEqual({ ok: true, label: false });
    expect(validateLabel("path_validity", "maybe", 4).ok).toBe(false);
  });
});

describe("reconcilePending", () => {
  it("creates one open card per unseen query", () => {
    const s = reconcilePending(initialState(), [hopQuery, relQuery], 1000);
    expect(s.cards).toHaveLength(2);
    expect(s.cards.every((c) => c.status === "open")).toBe(true);
    expect(s.cards[0]?.seenAt).toBe(1000);
  });

  it("does not duplicate cards on repeat polls", () => {
    let s = reconcilePending(initialState(), [hopQuery], 1000);
    s = reconcilePending(s, [hopQuery], 1800);
    expect(s.cards).toHaveLength(1);
    expect(s.cards[0]?.seenAt).toBe(1000);
  });

  it("expires open cards that vanish server-side", () => {
    let s = reconcilePending(initialState(), [hopQuery], 1000);
    s = reconcilePending(s, [], 2000);
    expect(s.cards[0]?.status).toBe("expired");
  });

  it("keeps answered cards as history", () => {
    let s = reconcilePending(initialState(), [hopQuery], 1000);
    s = applyAck(s, { query_id: "q1", label: 2, source: "interactive" });
    s = reconcilePending(s, [], 2000);
    expect(s.cards[0]?.status).toBe("answered");
  });

  it("marks the connection healthy", () => {
    const lost = { ...initialState(), connection: "lost" as const };
    expect(reconcilePending(lost, [], 0).connection).toBe("ok");
  });
});

describe("submission lifecycle", () => {
  it("open -> submitting -> answered disables the card", () => {
    let s = reconcilePending(initialState(), [hopQuery], 0);
    s = markSubmitting(s, "q1");
    expect(s.cards[0]?.status).toBe("submitting");
    s = applyAck(s, { query_id: "q1", label: 2, source: "interactive" });
    expect(s.cards[0]?.status).toBe("answered");
    expect(s.cards[0]?.answered?.label).toBe(2);
  });

  it("a stale id error reopens the card with an inline message", () => {
    let s = reconcilePending(initialState(), [hopQuery], 0);
    s = markSubmitting(s, "q1");
    s = applySubmitError(s, "q1", "query expired before the answer arrived");
    expect(s.cards[0]?.status).toBe("open");
    expect(s.cards[0]?.error).toMatch(/expired/);
  });
});

describe("event stream", () => {
  it("builds episodes and appends trace records in order", () => {
    const events: EngineEvent[] = [
      { event: "episode_start", episode_id: "ep0" },
      { event: "trace", episode_id: "ep0", record: { step: 1, node_id: 0, action: "rollout" } },
      { event: "trace", episode_id: "ep0", record: { step: 1, node_id: 0, action: 3 } },
      { event: "trace", episode_id: "ep0", record: { step: 2, node_id: 1, action: "answer" } },
      { event: "episode_end", episode_id: "ep0", answer: "e42", correct: true },
    ];
    let s = initialState();
    for (const ev of events) s = applyEvent(s, ev, 0);
    expect(s.episodes).toHaveLength(1);
    const ep = s.episodes[0];
    expect(ep?.records).toHaveLength(3);
    expect(traceOrdered(ep?.records ?? [])).toBe(true);
    expect(ep?.closed).toBe(true);
    expect(ep?.finalAnswer).toBe("e42");
  });

  it("query events create cards and answer events close them", () => {
    let s = initialState();
    s = applyEvent(s, { event: "query", query: relQuery }, 50);
    expect(s.cards[0]?.status).toBe("open");
    s = applyEvent(s, { event: "answer", query_id: "q2", label: false, source: "interactive" }, 60);
    expect(s.cards[0]?.status).toBe("answered");
    expect(s.answerLog).toHaveLength(1);
  });

  it("traceOrdered rejects step regressions", () => {
    expect(
      traceOrdered([
        { step: 2, node_id: 0, action: "rollout" },
        { step: 1, node_id: 0, action: "rollout" },
      ]),
    ).toBe(false);
  });
});

describe("presentation helpers", () => {
  it("renders kind-specific question lines", () => {
    expect(renderQuestion(hopQuery)).toContain("hops");
    expect(renderQuestion(relQuery)).toContain("relation r4");
  });

  it("renders paths as labeled chains", () => {
    expect(renderPathChain([[3, 2, 17], [17, 0, 40]])).toBe("#3 -r2-> #17 -r0-> #40");
    expect(renderPathChain([])).toBe("(empty path)");
  });

  it("counts down from the first sighting", () => {
    const s = reconcilePending(initialState(), [hopQuery], 10_000);
    const card = s.cards[0];
    expect(card).toBeDefined();
    if (card) {
      expect(remainingMs(card, 120_000, 70_000)).toBe(60_000);
      expect(remainingMs(card, 120_000, 200_000)).toBe(0);
    }
  });
});
