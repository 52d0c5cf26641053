import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { AssistantTurn, ChatView, sourceCard } from "../src/chat.js";
import { parseSseText } from "../src/sse.js";
import { fixtureText, makeFixtureServer } from "./fixtureServer.js";

const TRACE_EVENTS = parseSseText(fixtureText("chat_trace.sse"));

function playedTurn(): AssistantTurn {
  const turn = new AssistantTurn();
  for (const event of TRACE_EVENTS) turn.apply(event);
  return turn;
}

describe("AssistantTurn over the recorded stub trace", () => {
  it("renders the refined query in the process panel", () => {
    const turn = playedTurn();
    const refined = turn.root.querySelector(".refined-query");
    expect(refined?.textContent).toContain("REFINED:med query alpha");
  });

  it("renders all three divergent queries", () => {
    const turn = playedTurn();
    const divergent = [...turn.root.querySelectorAll(".divergent-query")];
    expect(divergent).toHaveLength(3);
    expect(divergent[0]?.textContent).toContain("DT1:REFINED:med query alpha");
    expect(divergent[2]?.textContent).toContain("DT3:REFINED:med query alpha");
  });

  it("renders judgement reasons", () => {
    const turn = playedTurn();
    const judgements = [...turn.root.querySelectorAll(".judgement")];
    expect(judgements).toHaveLength(4);
    for (const row of judgements) {
      expect(row.textContent).toContain("helpful");
      expect(row.textContent).toContain("stub-reason");
    }
  });

  it("renders source cards sorted ascending by distance, 4 decimal places", () => {
    const turn = playedTurn();
    const cards = [...turn.root.querySelectorAll(".source-card")];
    expect(cards.length).toBeGreaterThanOrEqual(4);
    const distances = cards.map((c) =>
      Number(c.querySelector(".source-distance")?.textContent),
    );
    expect([...distances].sort((a, b) => a - b)).toEqual(distances);
    for (const card of cards) {
      expect(card.querySelector(".source-distance")?.textContent).toMatch(/^\d\.\d{4}$/);
    }
  });

  it("accumulates the streamed answer text", () => {
    const turn = playedTurn();
    expect(turn.root.querySelector(".answer")?.textContent).toBe(
      "ANSWER(med query alpha)[4]",
    );
    expect(turn.done).toBe(true);
  });

  it("keeps reasoning collapsed by default and distinct from the answer", () => {
    const turn = new AssistantTurn();
    turn.apply({ type: "reasoning_delta", data: { text: "thinking step" } });
    turn.apply({ type: "answer_delta", data: { text: "the answer" } });
    const details = turn.root.querySelector("details.reasoning") as HTMLDetailsElement;
    expect(details.hidden).toBe(false);
    expect(details.open).toBe(false);
    expect(details.textContent).toContain("thinking step");
    expect(turn.root.querySelector(".answer")?.textContent).toBe("the answer");
  });

  it("renders an error banner on error events", () => {
    const turn = new AssistantTurn();
    turn.apply({ type: "answer_delta", data: { text: "partial" } });
    turn.apply({ type: "error", data: { message: "backend lost" } });
    expect(turn.failed).toBe(true);
    expect(turn.root.querySelector(".error-banner")?.textContent).toContain("backend lost");
    expect(turn.root.querySelector(".answer")?.textContent).toBe("partial");
  });

  it("never renders unknown event types", () => {
    const turn = new AssistantTurn();
    const before = turn.root.innerHTML;
    turn.apply({ type: "mystery_event", data: { text: "??" } });
    expect(turn.root.innerHTML).toBe(before);
  });

  it("flags no-context answers", () => {
    const turn = new AssistantTurn();
    turn.apply({
      type: "done",
      data: { answer: "x", mode: "addrep", no_context: true, used_snippets: [], session_id: "s" },
    });
    expect(turn.root.querySelector(".no-context")).not.toBeNull();
  });
});

describe("sourceCard", () => {
  it("shows title, text, reason, and provenance path", () => {
    const card = sourceCard({
      snippet_id: 9,
      text: "snippet body",
      distance: 0.1234567,
      doc_id: 1,
      doc_title: "Guide",
      source_path: "/docs/guide.txt",
      reason: "covers the dosing table",
    });
    expect(card.querySelector(".source-title")?.textContent).toBe("Guide");
    expect(card.querySelector(".source-distance")?.textContent).toBe("0.1235");
    expect(card.querySelector(".source-text")?.textContent).toBe("snippet body");
    expect(card.querySelector(".source-reason")?.textContent).toBe("covers the dosing table");
    expect(card.querySelector(".source-path")?.textContent).toBe("/docs/guide.txt");
  });
});

describe("ChatView against the fixture server", () => {
  beforeEach(() => {
    vi.stubGlobal("fetch", makeFixtureServer().fetch);
  });

  afterEach(() => {
    vi.unstubAllGlobals();
  });

  it("streams a full turn: user message, process panel, answer, sources", async () => {
    const view = new ChatView();
    document.body.append(view.root);
    const input = view.root.querySelector(".chat-input") as HTMLTextAreaElement;
    input.value = "med query alpha";
    await view.send();
    expect(view.root.querySelector(".message.user")?.textContent).toBe("med query alpha");
    expect(view.root.querySelectorAll(".divergent-query")).toHaveLength(3);
    expect(view.root.querySelector(".answer")?.textContent).toContain("ANSWER(");
    expect(view.root.querySelectorAll(".source-card").length).toBeGreaterThan(0);
    const send = view.root.querySelector(".send") as HTMLButtonElement;
    expect(send.disabled).toBe(false); // re-enabled after the stream closed
    view.root.remove();
  });

  it("shows an inline error banner when the request fails", async () => {
    vi.stubGlobal(
      "fetch",
      (async () => ({
        ok: false,
        status: 503,
        statusText: "503",
        json: async () => ({ code: "backend_unavailable", message: "ollama down" }),
        body: null,
      })) as unknown as typeof fetch,
    );
    const view = new ChatView();
    document.body.append(view.root);
    const input = view.root.querySelector(".chat-input") as HTMLTextAreaElement;
    input.value = "anything";
    await view.send();
    expect(view.root.querySelector(".error-banner")?.textContent).toContain("ollama down");
    const send = view.root.querySelector(".send") as HTMLButtonElement;
    expect(send.disabled).toBe(false);
    view.root.remove();
  });
});
