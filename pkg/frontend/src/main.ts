/** Entry point: wires the bridge client, the poll loop, and the event
 * stream to the store and renderer. Bridge URL comes from ?bridge=, the
 * hop selector bound from ?hmax=, timeout display from ?timeout= seconds. */

import { BridgeClient, BridgeHttpError } from "./api.js";
import {
  applyAck,
  applyEvent,
  applySubmitError,
  markConnectionLost,
  markSubmitting,
  reconcilePending,
  validateLabel,
} from "./store.js";
import { initialState, type AppState } from "./types.js";
import { render, type RenderHooks } from "./render.js";

const POLL_MS = 800;

function config() {
  const params = new URLSearchParams(window.location.search);
  return {
    bridge: params.get("bridge") ?? "http://127.0.0.1:8423",
    hMax: Number(params.get("hmax") ?? "8"),
    timeoutMs: Number(params.get("timeout") ?? "120") * 1000,
  };
}

function main(): void {
  const { bridge, hMax, timeoutMs } = config();
  const client = new BridgeClient(bridge);
  const root = document.getElementById("app");
  if (root === null) throw new Error("missing #app mount point");

  let state: AppState = initialState();
  let inFlight = false; // at most one submission at a time

  const hooks: RenderHooks = {
    hMax,
    timeoutMs,
    onSubmit: (queryId, raw) => void submit(queryId, raw),
  };

  const update = (next: AppState) => {
    state = next;
    render(root, state, hooks);
  };

  async function submit(queryId: string, raw: string | boolean): Promise<void> {
    if (inFlight) return;
    const card = state.cards.find((c) => c.query.query_id === queryId);
    if (!card || card.status !== "open") return;
    const check = validateLabel(card.query.kind, raw, hMax);
    if (!check.ok || check.label === undefined) {
      update(applySubmitError(markSubmitting(state, queryId), queryId, check.message ?? "invalid"));
      return;
    }
    inFlight = true;
    update(markSubmitting(state, queryId));
    try {
      const ack = await client.answer(queryId, check.label);
      update(applyAck(state, ack));
    } catch (err) {
      const msg =
        err instanceof BridgeHttpError && err.status === 404
          ? "query expired before the answer arrived"
          : String(err);
      update(applySubmitError(state, queryId, msg));
    } finally {
      inFlight = false;
    }
  }

  async function pollLoop(): Promise<void> {
    for (;;) {
      try {
        const pending = await client.pending();
        update(reconcilePending(state, pending, Date.now()));
      } catch {
        update(markConnectionLost(state));
      }
      await new Promise((r) => setTimeout(r, POLL_MS));
    }
  }

  async function eventLoop(): Promise<void> {
    for (;;) {
      try {
        await client.streamEvents((ev) => update(applyEvent(state, ev, Date.now())));
      } catch {
        update(markConnectionLost(state));
      }
      await new Promise((r) => setTimeout(r, POLL_MS));
    }
  }

  render(root, state, hooks);
  void pollLoop();
  void eventLoop();
}

main();
