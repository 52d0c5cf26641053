/** Thin typed client over the server's HTTP API. */

import { consumeSse } from "./sse.js";
import type {
  AgentConfig,
  ApiErrorBody,
  DocumentRecord,
  Health,
  RetrievalHit,
  TraceEvent,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

async function toError(resp: Response): Promise<ApiError> {
  let body: ApiErrorBody = { code: "internal", message: resp.statusText };
  try {
    body = (await resp.json()) as ApiErrorBody;
  } catch {
    // non-JSON error body: keep the status text
  }
  return new ApiError(resp.status, body.code, body.message);
}

async function request<T>(path: string, init?: RequestInit): Promise<T> {
  const resp = await fetch(path, init);
  if (!resp.ok) throw await toError(resp);
  if (resp.status === 204) return undefined as T;
  return (await resp.json()) as T;
}

const json = (body: unknown): RequestInit => ({
  method: "POST",
  headers: { "content-type": "application/json" },
  body: JSON.stringify(body),
});

export function listDocuments(): Promise<DocumentRecord[]> {
  return request("/api/documents");
}

export function createDocument(
  title: string,
  format: string,
  text: string,
): Promise<DocumentRecord> {
  return request("/api/documents", json({ title, format, text }));
}

export function uploadDocument(file: File, title?: string): Promise<DocumentRecord> {
  const form = new FormData();
  form.append("file", file);
  if (title) form.append("title", title);
  return request("/api/documents", { method: "POST", body: form });
}

export function setDocumentEnabled(
  docId: number,
  enabled: boolean,
): Promise<DocumentRecord> {
  return request(`/api/documents/${docId}`, {
    method: "PATCH",
    headers: { "content-type": "application/json" },
    body: JSON.stringify({ enabled }),
  });
}

export function deleteDocument(docId: number): Promise<void> {
  return request(`/api/documents/${docId}`, { method: "DELETE" });
}

export function retrieve(query: string, topk: number): Promise<{ hits: RetrievalHit[] }> {
  return request("/api/retrieve", json({ query, topk }));
}

export function getAgent(role: string): Promise<AgentConfig> {
  return request(`/api/agents/${role}`);
}

export function putAgent(
  role: string,
  update: Partial<AgentConfig>,
): Promise<AgentConfig> {
  return request(`/api/agents/${role}`, {
    method: "PUT",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(update),
  });
}

export function health(): Promise<Health> {
  return request("/api/health");
}

export interface ChatRequest {
  session_id: string;
  message: string;
  docs_enhanced: boolean;
  mode?: string;
}

/** Stream a chat turn; resolves when the SSE stream closes. */
export async function streamChat(
  req: ChatRequest,
  onEvent: (event: TraceEvent) => void,
): Promise<void> {
  const resp = await fetch("/api/chat", json(req));
  if (!resp.ok) throw await toError(resp);
  if (!resp.body) throw new ApiError(0, "internal", "response has no body stream");
  await consumeSse(resp.body, onEvent);
}
