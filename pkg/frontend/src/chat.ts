/** Chat view: streamed answers with reasoning, process trace, and source cards. */

import { streamChat } from "./api.js";
import { clear, el, formatDistance } from "./dom.js";
import type { DoneEvent, TraceEvent, UsedSnippet } from "./types.js";

interface ProcessState {
  refined?: string;
  divergent: { index: number; query: string }[];
  judgements: { snippet_id: number; helpful: boolean; reason: string }[];
  drops: { snippet_id: number; distance: number }[];
}

/** One assistant turn under construction; applies trace events to the DOM. */
export class AssistantTurn {
  readonly root: HTMLElement;
  private readonly reasoningText: HTMLElement;
  private readonly reasoningBlock: HTMLDetailsElement;
  private readonly answerBlock: HTMLElement;
  private readonly processList: HTMLElement;
  private readonly processBlock: HTMLDetailsElement;
  private readonly sourcesBlock: HTMLElement;
  private readonly state: ProcessState = { divergent: [], judgements: [], drops: [] };
  done = false;
  failed = false;

  constructor() {
    this.reasoningText = el("pre", { class: "reasoning-text" });
    this.reasoningBlock = el(
      "details",
      { class: "reasoning" },
      el("summary", {}, "reasoning"),
      this.reasoningText,
    );
    this.reasoningBlock.open = false; // collapsed by default, distinct styling
    this.reasoningBlock.hidden = true;
    this.answerBlock = el("div", { class: "answer" });
    this.processList = el("ul", { class: "process-list" });
    this.processBlock = el(
      "details",
      { class: "process" },
      el("summary", {}, "process"),
      this.processList,
    );
    this.processBlock.hidden = true;
    this.sourcesBlock = el("div", { class: "sources" });
    this.root = el(
      "div",
      { class: "message assistant" },
      this.processBlock,
      this.reasoningBlock,
      this.answerBlock,
      this.sourcesBlock,
    );
  }

  apply(event: TraceEvent): void {
    const data = event.data;
    switch (event.type) {
      case "refined_query":
        this.state.refined = String(data["query"] ?? "");
        this.renderProcess();
        break;
      case "divergent_query":
        this.state.divergent.push({
          index: Number(data["index"] ?? 0),
          query: String(data["query"] ?? ""),
        });
        this.renderProcess();
        break;
      case "threshold_drop":
        this.state.drops.push({
          snippet_id: Number(data["snippet_id"] ?? -1),
          distance: Number(data["distance"] ?? NaN),
        });
        this.renderProcess();
        break;
      case "judgement":
        this.state.judgements.push({
          snippet_id: Number(data["snippet_id"] ?? -1),
          helpful: Boolean(data["helpful"]),
          reason: String(data["reason"] ?? ""),
        });
        this.renderProcess();
        break;
      case "retrieval":
        break; // hits surface later as source cards on done
      case "reasoning_delta":
        this.reasoningBlock.hidden = false;
        this.reasoningText.append(String(data["text"] ?? ""));
        break;
      case "answer_delta":
        this.answerBlock.append(String(data["text"] ?? ""));
        break;
      case "error":
        this.failed = true;
        this.root.append(
          el("div", { class: "error-banner" }, `error: ${String(data["message"] ?? "")}`),
        );
        break;
      case "done":
        this.done = true;
        this.finish(event.data as unknown as DoneEvent);
        break;
      default:
        // unknown event types are ignored, never rendered as "unknown"
        break;
    }
  }

  private renderProcess(): void {
    this.processBlock.hidden = false;
    clear(this.processList);
    if (this.state.refined !== undefined) {
      this.processList.append(
        el("li", { class: "refined-query" }, `refined query: ${this.state.refined}`),
      );
    }
    for (const dq of this.state.divergent) {
      this.processList.append(
        el("li", { class: "divergent-query" }, `divergent ${dq.index}: ${dq.query}`),
      );
    }
    for (const drop of this.state.drops) {
      this.processList.append(
        el(
          "li",
          { class: "threshold-drop" },
          `dropped snippet ${drop.snippet_id} (distance ${formatDistance(drop.distance)})`,
        ),
      );
    }
    for (const j of this.state.judgements) {
      this.processList.append(
        el(
          "li",
          { class: `judgement ${j.helpful ? "helpful" : "unhelpful"}` },
          `snippet ${j.snippet_id}: ${j.helpful ? "helpful" : "not helpful"}` +
            (j.reason ? ` — ${j.reason}` : ""),
        ),
      );
    }
  }

  private finish(done: DoneEvent): void {
    const snippets = [...done.used_snippets].sort((a, b) => a.distance - b.distance);
    if (done.no_context && snippets.length === 0 && done.mode !== "baseline") {
      this.root.append(
        el("div", { class: "no-context" }, "answered without knowledge-base context"),
      );
    }
    if (snippets.length) {
      this.sourcesBlock.append(el("h4", {}, "sources"));
      for (const snip of snippets) this.sourcesBlock.append(sourceCard(snip));
    }
  }
}

export function sourceCard(snippet: UsedSnippet): HTMLElement {
  return el(
    "div",
    { class: "source-card", "data-snippet-id": String(snippet.snippet_id) },
    el("div", { class: "source-head" },
      el("span", { class: "source-title" }, snippet.doc_title),
      el("span", { class: "source-distance" }, formatDistance(snippet.distance)),
    ),
    el("div", { class: "source-text" }, snippet.text),
    snippet.reason ? el("div", { class: "source-reason" }, snippet.reason) : null,
    el("div", { class: "source-path" }, snippet.source_path),
  );
}

export class ChatView {
  readonly root: HTMLElement;
  private readonly messages: HTMLElement;
  private readonly input: HTMLTextAreaElement;
  private readonly sendButton: HTMLButtonElement;
  private readonly docsToggle: HTMLInputElement;
  private readonly sessionId = `ui-${Math.random().toString(36).slice(2, 10)}`;
  private streaming = false;

  constructor() {
    this.messages = el("div", { class: "messages" });
    this.input = el("textarea", {
      class: "chat-input",
      placeholder: "Ask a question…",
      rows: "2",
    });
    this.sendButton = el("button", { class: "send", onclick: () => void this.send() }, "Send");
    this.docsToggle = el("input", { type: "checkbox" });
    this.docsToggle.checked = true;
    this.root = el(
      "section",
      { class: "chat-view" },
      this.messages,
      el(
        "div",
        { class: "composer" },
        this.input,
        el("label", { class: "docs-toggle" }, this.docsToggle, "Docs-Enhanced"),
        this.sendButton,
      ),
    );
    this.input.addEventListener("keydown", (ev) => {
      if ((ev as KeyboardEvent).key === "Enter" && !(ev as KeyboardEvent).shiftKey) {
        ev.preventDefault();
        void this.send();
      }
    });
  }

  async send(): Promise<void> {
    const message = this.input.value.trim();
    if (!message || this.streaming) return;
    this.streaming = true;
    this.sendButton.disabled = true;
    this.input.value = "";
    this.messages.append(el("div", { class: "message user" }, message));
    const turn = new AssistantTurn();
    this.messages.append(turn.root);
    try {
      await streamChat(
        {
          session_id: this.sessionId,
          message,
          docs_enhanced: this.docsToggle.checked,
        },
        (event) => turn.apply(event),
      );
      if (!turn.done && !turn.failed) {
        turn.apply({ type: "error", data: { message: "stream ended unexpectedly" } });
      }
    } catch (err) {
      turn.apply({ type: "error", data: { message: String(err) } });
    } finally {
      this.streaming = false;
      this.sendButton.disabled = false;
      this.messages.scrollTop = this.messages.scrollHeight;
    }
  }
}
