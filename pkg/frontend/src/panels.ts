// Tabbed configuration panels (controller gains / sampler / process).
// Form edits are local until the commit button sends them; the button stays
// disabled until the service acknowledges with a status message. Inputs are
// validated inline and nothing is sent while any field is invalid.

import { OutboundMsg, Placement, ServiceConfig } from "./types.js";

interface Field {
  input: HTMLInputElement;
  error: HTMLElement;
  validate(value: number): string | null;
}

function numberField(doc: Document, label: string, name: string,
                     validate: (v: number) => string | null): { row: HTMLElement; field: Field } {
  const row = doc.createElement("label");
  row.className = "field-row";
  const span = doc.createElement("span");
  span.textContent = label;
  const input = doc.createElement("input");
  input.type = "text";
  input.name = name;
  const error = doc.createElement("em");
  error.className = "field-error";
  row.append(span, input, error);
  return { row, field: { input, error, validate } };
}

function readField(field: Field): number | null {
  const value = Number(field.input.value.trim());
  const problem = !Number.isFinite(value) ? "not a number" : field.validate(value);
  field.error.textContent = problem ?? "";
  return problem === null ? value : null;
}

const finite = () => null;
const positive = (v: number) => (v > 0 ? null : "must be > 0");

export class ConfigPanels {
  readonly root: HTMLElement;
  private readonly send: (msg: OutboundMsg) => void;
  private readonly commits: HTMLButtonElement[] = [];
  private readonly fields = new Map<string, Field>();
  private placementSelect!: HTMLSelectElement;
  private placementTouched = false;
  private role: string = "unknown";

  constructor(doc: Document, root: HTMLElement, send: (msg: OutboundMsg) => void) {
    this.root = root;
    this.send = send;

    const tabs = doc.createElement("div");
    tabs.className = "tabs";
    const panes = doc.createElement("div");
    panes.className = "panes";
    root.append(tabs, panes);

    const pidPane = this.buildPane(doc, tabs, panes, "pid", "Controller", true);
    for (const [label, name] of [["k_p", "kp"], ["k_i", "ki"], ["k_d", "kd"]] as const) {
      const { row, field } = numberField(doc, label, name, finite);
      this.fields.set(name, field);
      pidPane.appendChild(row);
    }
    pidPane.appendChild(this.commitButton(doc, "Apply gains", () => this.commitGains()));

    const samplerPane = this.buildPane(doc, tabs, panes, "sampler", "Sampler", false);
    const delta = numberField(doc, "delta", "delta", positive);
    this.fields.set("delta", delta.field);
    samplerPane.appendChild(delta.row);
    const placementRow = doc.createElement("label");
    placementRow.className = "field-row";
    const placementLabel = doc.createElement("span");
    placementLabel.textContent = "placement";
    this.placementSelect = doc.createElement("select");
    for (const [value, text] of [["error", "error signal (process side)"],
                                 ["control", "controller output"]] as const) {
      const opt = doc.createElement("option");
      opt.value = value;
      opt.textContent = text;
      this.placementSelect.appendChild(opt);
    }
    this.placementSelect.addEventListener("change", () => {
      this.placementTouched = true;
    });
    placementRow.append(placementLabel, this.placementSelect);
    samplerPane.appendChild(placementRow);
    samplerPane.appendChild(this.commitButton(doc, "Apply sampler", () => this.commitSampler()));

    const processPane = this.buildPane(doc, tabs, panes, "process", "Process", false);
    const setpoint = numberField(doc, "setpoint (cm)", "setpoint", finite);
    this.fields.set("setpoint", setpoint.field);
    processPane.appendChild(setpoint.row);
    processPane.appendChild(this.commitButton(doc, "Apply setpoint", () => this.commitProcess()));
  }

  private buildPane(doc: Document, tabs: HTMLElement, panes: HTMLElement,
                    key: string, title: string, active: boolean): HTMLElement {
    const tab = doc.createElement("button");
    tab.textContent = title;
    tab.className = active ? "tab active" : "tab";
    tab.dataset.tab = key;
    const pane = doc.createElement("div");
    pane.className = active ? "pane active" : "pane";
    pane.dataset.pane = key;
    tab.addEventListener("click", () => {
      for (const el of tabs.querySelectorAll(".tab")) el.classList.remove("active");
      for (const el of panes.querySelectorAll(".pane")) el.classList.remove("active");
      tab.classList.add("active");
      pane.classList.add("active");
    });
    tabs.appendChild(tab);
    panes.appendChild(pane);
    return pane;
  }

  private commitButton(doc: Document, label: string, action: () => void): HTMLButtonElement {
    const button = doc.createElement("button");
    button.textContent = label;
    button.className = "commit";
    button.addEventListener("click", action);
    this.commits.push(button);
    return button;
  }

  private lockCommits(): void {
    for (const b of this.commits) b.disabled = true;
  }

  onAck(): void {
    if (this.role !== "observer") {
      for (const b of this.commits) b.disabled = false;
    }
  }

  setRole(role: string): void {
    this.role = role;
    const readOnly = role === "observer";
    for (const b of this.commits) b.disabled = readOnly;
    for (const f of this.fields.values()) f.input.disabled = readOnly;
    this.placementSelect.disabled = readOnly;
  }

  // fills only fields the user has not touched; pending edits survive
  populate(config: ServiceConfig, placement: Placement): void {
    for (const key of ["kp", "ki", "kd", "delta", "setpoint"] as const) {
      const field = this.fields.get(key)!;
      if (field.input.value === "") field.input.value = String(config[key]);
    }
    if (!this.placementTouched) this.placementSelect.value = placement;
  }

  commitGains(): void {
    const kp = readField(this.fields.get("kp")!);
    const ki = readField(this.fields.get("ki")!);
    const kd = readField(this.fields.get("kd")!);
    if (kp === null || ki === null || kd === null) return;
    this.lockCommits();
    this.send({ op: "set_gains", kp, ki, kd });
  }

  commitSampler(): void {
    const delta = readField(this.fields.get("delta")!);
    if (delta === null) return;
    this.lockCommits();
    this.send({ op: "set_delta", delta });
    this.send({ op: "set_placement", placement: this.placementSelect.value as Placement });
  }

  commitProcess(): void {
    const setpoint = readField(this.fields.get("setpoint")!);
    if (setpoint === null) return;
    this.lockCommits();
    this.send({ op: "set_setpoint", setpoint });
  }
}
