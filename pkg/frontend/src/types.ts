/** Wire types mirroring the server's JSON bodies. */

export interface DocumentRecord {
  doc_id: number;
  title: string;
  source_path: string;
  format: string;
  enabled: boolean;
  created_at: string;
  snippet_count: number;
  dropped_by_rule: number;
  dropped_by_agent: number;
}

export interface RetrievalHit {
  snippet_id: number;
  text: string;
  distance: number;
  doc_id: number;
  doc_title: string;
  source_path: string;
}

export interface UsedSnippet extends RetrievalHit {
  reason: string;
}

export type TraceEventType =
  | "refined_query"
  | "retrieval"
  | "divergent_query"
  | "threshold_drop"
  | "judgement"
  | "reasoning_delta"
  | "answer_delta"
  | "error"
  | "done";

export interface TraceEvent {
  type: TraceEventType | string;
  data: Record<string, unknown>;
}

export interface DoneEvent {
  answer: string;
  mode: string;
  no_context: boolean;
  used_snippets: UsedSnippet[];
  session_id: string;
}

export interface AgentConfig {
  role: string;
  model_name: string;
  prompt_template: string;
  temperature: number;
  max_output_tokens: number;
  timeout: number;
}

export interface Health {
  backend_reachable: boolean;
  embedding_dim: number | null;
  kb_counts: { documents: number; snippets: number; tombstones: number };
}

export interface ApiErrorBody {
  code: string;
  message: string;
}

/** Placeholders each agent role's prompt must contain (mirrors the server). */
export const REQUIRED_PLACEHOLDERS: Record<string, string[]> = {
  filter: ["snippet"],
  query_refine: ["query", "history"],
  divergent: ["query", "snippets", "m"],
  judge: ["query", "snippet"],
  answer: ["query", "snippets"],
};
