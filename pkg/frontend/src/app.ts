/** Entry point: three views behind a tab bar (Chat, Knowledge Base, Settings). */

import { health } from "./api.js";
import { ChatView } from "./chat.js";
import { clear, el } from "./dom.js";
import { KbView } from "./kb.js";
import { SettingsView } from "./settings.js";

export function mountApp(root: HTMLElement): void {
  const chat = new ChatView();
  const kb = new KbView();
  const settings = new SettingsView();
  const views: Record<string, { root: HTMLElement; activate?: () => void }> = {
    Chat: { root: chat.root },
    "Knowledge Base": { root: kb.root, activate: () => void kb.refresh() },
    Settings: { root: settings.root, activate: () => void settings.load() },
  };

  const outlet = el("main", { class: "outlet" });
  const tabs = el("nav", { class: "tabs" });
  const buttons = new Map<string, HTMLButtonElement>();
  for (const name of Object.keys(views)) {
    const button = el("button", { class: "tab", onclick: () => show(name) }, name);
    buttons.set(name, button);
    tabs.append(button);
  }
  const backendBadge = el("span", { class: "backend-badge" }, "checking backend…");
  tabs.append(backendBadge);

  function show(name: string): void {
    const view = views[name];
    if (!view) return;
    clear(outlet);
    outlet.append(view.root);
    for (const [n, b] of buttons) b.classList.toggle("active", n === name);
    view.activate?.();
  }

  root.append(el("header", {}, el("h1", {}, "ktalk"), tabs), outlet);
  show("Chat");

  void health()
    .then((h) => {
      backendBadge.textContent = h.backend_reachable
        ? `backend up · ${h.kb_counts.snippets} snippets`
        : "backend unreachable";
      backendBadge.classList.toggle("down", !h.backend_reachable);
    })
    .catch(() => {
      backendBadge.textContent = "server unreachable";
      backendBadge.classList.add("down");
    });
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  mountApp(document.getElementById("app") as HTMLElement);
}
