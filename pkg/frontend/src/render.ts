/** DOM layer: renders AppState into the page and wires control callbacks.
 * Kept mechanical so everything interesting lives in store.ts. */

import type { AppState, QueryCard, EpisodeView } from "./types.js";
import { remainingMs, renderPathChain, renderQuestion } from "./store.js";

export interface RenderHooks {
  onSubmit: (queryId: string, raw: string | boolean) => void;
  hMax: number;
  timeoutMs: number;
}

function el(tag: string, cls: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

function controlRow(card: QueryCard, hooks: RenderHooks): HTMLElement {
  const row = el("div", "controls");
  const disabled = card.status !== "open";
  if (card.query.kind === "hop_depth") {
    const select = document.createElement("select");
    for (let h = 1; h <= hooks.hMax; h++) {
      const opt = document.createElement("option");
      opt.value = String(h);
      opt.textContent = `${h} hop${h > 1 ? "s" : ""}`;
      select.appendChild(opt);
    }
    select.disabled = disabled;
    const send = el("button", "send", "answer") as HTMLButtonElement;
    send.disabled = disabled;
    send.addEventListener("click", () => hooks.onSubmit(card.query.query_id, select.value));
    row.append(select, send);
  } else {
    for (const [text, value] of [
      ["yes", true],
      ["no", false],
    ] as const) {
      const btn = el("button", `bool-${text}`, text) as HTMLButtonElement;
      btn.disabled = disabled;
      btn.addEventListener("click", () => hooks.onSubmit(card.query.query_id, value));
      row.appendChild(btn);
    }
  }
  return row;
}

function cardNode(card: QueryCard, hooks: RenderHooks, now: number): HTMLElement {
  const node = el("section", `card card-${card.status}`);
  node.dataset.queryId = card.query.query_id;
  node.dataset.status = card.status;
  node.appendChild(el("h3", "kind", card.query.kind));
  node.appendChild(el("p", "question", renderQuestion(card.query)));
  if (card.query.payload.path) {
    node.appendChild(el("pre", "context", renderPathChain(card.query.payload.path)));
  }
  const secs = Math.ceil(remainingMs(card, hooks.timeoutMs, now) / 1000);
  node.appendChild(el("p", "countdown", card.status === "open" ? `${secs}s left` : card.status));
  if (card.error) node.appendChild(el("p", "error", card.error));
  if (card.answered) {
    node.appendChild(el("p", "ack", `answered: ${String(card.answered.label)}`));
  }
  node.appendChild(controlRow(card, hooks));
  return node;
}

function episodeNode(ep: EpisodeView): HTMLElement {
  const node = el("section", "episode");
  node.dataset.episodeId = ep.episodeId;
  node.appendChild(
    el("h3", "ep-title", `${ep.episodeId}${ep.closed ? " (done)" : " (live)"}`),
  );
  const list = el("ol", "trace");
  for (const rec of ep.records) {
    const item = el("li", "trace-record", `step ${rec.step}: ${String(rec.action)}`);
    if (rec.action === "oracle" || rec.action === "hop_query") {
      item.classList.add("human-query");
    }
    list.appendChild(item);
  }
  node.appendChild(list);
  if (ep.finalAnswer !== undefined) {
    node.appendChild(
      el("p", "final", `answer: ${ep.finalAnswer}${ep.correct ? " (correct)" : ""}`),
    );
  }
  return node;
}

export function render(root: HTMLElement, state: AppState, hooks: RenderHooks): void {
  root.textContent = "";
  if (state.connection === "lost") {
    const banner = el("div", "banner-lost", "engine unreachable, retrying");
    root.appendChild(banner);
  }
  const pendingPane = el("div", "pane pending-pane");
  pendingPane.appendChild(el("h2", "", "oracle queries"));
  const open = state.cards.filter((c) => c.status !== "expired");
  if (open.length === 0) {
    pendingPane.appendChild(el("p", "empty", "no pending queries"));
  }
  const now = Date.now();
  for (const card of open) pendingPane.appendChild(cardNode(card, hooks, now));
  root.appendChild(pendingPane);

  const tracePane = el("div", "pane trace-pane");
  tracePane.appendChild(el("h2", "", "episodes"));
  for (const ep of state.episodes) tracePane.appendChild(episodeNode(ep));
  root.appendChild(tracePane);
}
