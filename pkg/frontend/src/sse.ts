/** Incremental parser for `event: <type>\ndata: <json>\n\n` frames. */

import type { TraceEvent } from "./types.js";

export class SseFrameParser {
  private buffer = "";

  /** Feed a decoded chunk; returns the events completed by it. */
  feed(chunk: string): TraceEvent[] {
    this.buffer += chunk;
    const frames = this.buffer.split("\n\n");
    this.buffer = frames.pop() ?? "";
    const events: TraceEvent[] = [];
    for (const frame of frames) {
      const parsed = parseFrame(frame);
      if (parsed) events.push(parsed);
    }
    return events;
  }

  /** Parse whatever remains after the stream closed. */
  flush(): TraceEvent[] {
    const rest = this.buffer;
    this.buffer = "";
    const parsed = rest.trim() ? parseFrame(rest) : null;
    return parsed ? [parsed] : [];
  }
}

function parseFrame(frame: string): TraceEvent | null {
  let type = "";
  const dataLines: string[] = [];
  for (const line of frame.split("\n")) {
    if (line.startsWith("event:")) type = line.slice("event:".length).trim();
    else if (line.startsWith("data:")) dataLines.push(line.slice("data:".length).trimStart());
  }
  if (!type && dataLines.length === 0) return null;
  let data: Record<string, unknown> = {};
  if (dataLines.length) {
    try {
      data = JSON.parse(dataLines.join("\n"));
    } catch {
      return null; // malformed frame: skip rather than break the stream
    }
  }
  return { type: type || "message", data };
}

/** Read a fetch response body as SSE, invoking onEvent per parsed frame. */
export async function consumeSse(
  body: ReadableStream<Uint8Array>,
  onEvent: (event: TraceEvent) => void,
): Promise<void> {
  const reader = body.getReader();
  const decoder = new TextDecoder();
  const parser = new SseFrameParser();
  for (;;) {
    const { done, value } = await reader.read();
    if (done) break;
    for (const event of parser.feed(decoder.decode(value, { stream: true }))) {
      onEvent(event);
    }
  }
  for (const event of parser.feed(decoder.decode())) onEvent(event);
  for (const event of parser.flush()) onEvent(event);
}

export function parseSseText(text: string): TraceEvent[] {
  const parser = new SseFrameParser();
  return [...parser.feed(text), ...parser.flush()];
}
