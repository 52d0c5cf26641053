/** Agent settings: per-role prompt editor with placeholder validation. */

import { getAgent, putAgent } from "./api.js";
import { clear, el } from "./dom.js";
import { REQUIRED_PLACEHOLDERS } from "./types.js";

/** Names required for the role but missing from the template. */
export function missingPlaceholders(role: string, template: string): string[] {
  const required = REQUIRED_PLACEHOLDERS[role] ?? [];
  return required.filter((name) => !template.includes(`{${name}}`));
}

export class SettingsView {
  readonly root: HTMLElement;
  private readonly roleSelect: HTMLSelectElement;
  private readonly template: HTMLTextAreaElement;
  private readonly modelInput: HTMLInputElement;
  private readonly temperature: HTMLInputElement;
  private readonly validation: HTMLElement;
  private readonly status: HTMLElement;

  constructor() {
    this.roleSelect = el("select", {});
    for (const role of Object.keys(REQUIRED_PLACEHOLDERS)) {
      this.roleSelect.append(el("option", { value: role }, role));
    }
    this.template = el("textarea", { class: "template", rows: "12" });
    this.modelInput = el("input", { class: "model" });
    this.temperature = el("input", { type: "number", step: "0.1", min: "0" });
    this.validation = el("p", { class: "validation" });
    this.status = el("p", { class: "status" });
    this.root = el(
      "section",
      { class: "settings-view" },
      el("label", {}, "agent: ", this.roleSelect),
      el("label", {}, "model: ", this.modelInput),
      el("label", {}, "temperature: ", this.temperature),
      el("label", {}, "prompt template:", this.template),
      this.validation,
      el("button", { class: "save", onclick: () => void this.save() }, "Save"),
      this.status,
    );
    this.roleSelect.addEventListener("change", () => void this.load());
    this.template.addEventListener("input", () => this.validate());
  }

  get role(): string {
    return this.roleSelect.value;
  }

  async load(): Promise<void> {
    const cfg = await getAgent(this.role);
    this.template.value = cfg.prompt_template;
    this.modelInput.value = cfg.model_name;
    this.temperature.value = String(cfg.temperature);
    this.validate();
    this.status.textContent = "";
  }

  /** Client-side gate: refuse to save a template missing required slots. */
  validate(): string[] {
    const missing = missingPlaceholders(this.role, this.template.value);
    clear(this.validation);
    if (missing.length) {
      this.validation.append(
        el(
          "span",
          { class: "validation-error" },
          `missing placeholders: ${missing.map((m) => `{${m}}`).join(", ")}`,
        ),
      );
    }
    return missing;
  }

  async save(): Promise<void> {
    if (this.validate().length) return;
    try {
      await putAgent(this.role, {
        prompt_template: this.template.value,
        model_name: this.modelInput.value || undefined,
        temperature: this.temperature.value ? Number(this.temperature.value) : undefined,
      });
      this.status.textContent = "saved";
    } catch (err) {
      this.status.textContent = `save failed: ${String(err)}`;
    }
  }
}
