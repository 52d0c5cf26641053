/** Knowledge-base view: document list with toggles, upload, snippet retrieval. */

import {
  createDocument,
  deleteDocument,
  listDocuments,
  retrieve,
  setDocumentEnabled,
  uploadDocument,
} from "./api.js";
import { clear, el, formatDistance } from "./dom.js";
import type { DocumentRecord, RetrievalHit } from "./types.js";

export function hitCard(hit: RetrievalHit): HTMLElement {
  return el(
    "div",
    { class: "snippet-card", "data-snippet-id": String(hit.snippet_id) },
    el(
      "div",
      { class: "snippet-head" },
      el("span", { class: "snippet-doc" }, hit.doc_title),
      el("span", { class: "snippet-distance" }, formatDistance(hit.distance)),
    ),
    el("div", { class: "snippet-text" }, hit.text),
    el("div", { class: "snippet-path" }, hit.source_path),
  );
}

/** Renders hits sorted ascending by distance regardless of arrival order. */
export function renderHits(container: HTMLElement, hits: RetrievalHit[]): void {
  clear(container);
  const sorted = [...hits].sort((a, b) => a.distance - b.distance);
  if (!sorted.length) {
    container.append(el("p", { class: "empty" }, "no snippets found"));
    return;
  }
  for (const hit of sorted) container.append(hitCard(hit));
}

export class KbView {
  readonly root: HTMLElement;
  private readonly tableBody: HTMLElement;
  private readonly status: HTMLElement;
  private readonly results: HTMLElement;
  private readonly queryInput: HTMLInputElement;
  private readonly topkInput: HTMLInputElement;

  constructor() {
    this.tableBody = el("tbody", {});
    this.status = el("p", { class: "status" });
    this.results = el("div", { class: "snippet-results" });
    this.queryInput = el("input", { class: "query-input", placeholder: "Search snippets…" });
    this.topkInput = el("input", { type: "number", class: "topk", value: "5", min: "1" });

    const fileInput = el("input", { type: "file" });
    fileInput.addEventListener("change", () => {
      const file = fileInput.files?.[0];
      if (file) void this.upload(file);
      fileInput.value = "";
    });

    this.root = el(
      "section",
      { class: "kb-view" },
      el(
        "div",
        { class: "kb-toolbar" },
        el("label", { class: "upload-button" }, "Upload", fileInput),
        this.status,
      ),
      el(
        "table",
        { class: "doc-table" },
        el(
          "thead",
          {},
          el(
            "tr",
            {},
            el("th", {}, "title"),
            el("th", {}, "snippets"),
            el("th", {}, "enabled"),
            el("th", {}, ""),
          ),
        ),
        this.tableBody,
      ),
      el(
        "div",
        { class: "retrieval-panel" },
        el("h3", {}, "Knowledge snippet retrieval"),
        el(
          "div",
          { class: "retrieval-controls" },
          this.queryInput,
          this.topkInput,
          el("button", { onclick: () => void this.search() }, "Retrieve"),
        ),
        this.results,
      ),
    );
  }

  async refresh(): Promise<void> {
    const docs = await listDocuments();
    this.renderDocuments(docs);
  }

  renderDocuments(docs: DocumentRecord[]): void {
    clear(this.tableBody);
    for (const doc of docs) this.tableBody.append(this.row(doc));
  }

  private row(doc: DocumentRecord): HTMLElement {
    const toggle = el("input", { type: "checkbox", class: "enable-toggle" });
    toggle.checked = doc.enabled;
    toggle.addEventListener("change", () => void this.toggle(doc.doc_id, toggle));
    const remove = el(
      "button",
      { class: "delete", onclick: () => void this.remove(doc.doc_id) },
      "delete",
    );
    return el(
      "tr",
      { "data-doc-id": String(doc.doc_id) },
      el("td", {}, doc.title),
      el("td", {}, String(doc.snippet_count)),
      el("td", {}, toggle),
      el("td", {}, remove),
    );
  }

  /** Optimistic toggle: the checkbox already moved; roll back on error. */
  private async toggle(docId: number, box: HTMLInputElement): Promise<void> {
    const wanted = box.checked;
    try {
      const updated = await setDocumentEnabled(docId, wanted);
      box.checked = updated.enabled;
      this.status.textContent = "";
    } catch (err) {
      box.checked = !wanted;
      this.status.textContent = `toggle failed: ${String(err)}`;
    }
  }

  private async remove(docId: number): Promise<void> {
    try {
      await deleteDocument(docId);
      await this.refresh();
    } catch (err) {
      this.status.textContent = `delete failed: ${String(err)}`;
    }
  }

  private async upload(file: File): Promise<void> {
    this.status.textContent = `uploading ${file.name}…`;
    try {
      const record = await uploadDocument(file);
      this.status.textContent = `${record.title}: ${record.snippet_count} snippets indexed`;
      await this.refresh();
    } catch (err) {
      this.status.textContent = `upload failed: ${String(err)}`;
    }
  }

  async addText(title: string, text: string, format = "txt"): Promise<void> {
    await createDocument(title, format, text);
    await this.refresh();
  }

  async search(): Promise<void> {
    const query = this.queryInput.value.trim();
    if (!query) return;
    const topk = Math.max(1, Number(this.topkInput.value) || 5);
    try {
      const { hits } = await retrieve(query, topk);
      renderHits(this.results, hits);
    } catch (err) {
      clear(this.results);
      this.results.append(el("p", { class: "error-banner" }, String(err)));
    }
  }
}
