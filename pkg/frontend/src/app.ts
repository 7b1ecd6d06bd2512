// Dashboard wiring: one WebSocket to the session service, two strip charts
// (process output and controller output), run controls and config panels.
// The sampler-output overlay follows the active placement: it draws over the
// process plot when the error signal is sampled, over the controller plot
// when the controller output is sampled, always with step interpolation.

import { StripChart } from "./chart.js";
import { ConfigPanels } from "./panels.js";
import { applyMessage, initialState, UiState } from "./state.js";
import { OutboundMsg } from "./types.js";

export interface WsLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
}

export type WsFactory = (url: string) => WsLike;

export class App {
  readonly state: UiState;
  readonly processChart: StripChart;
  readonly controlChart: StripChart;
  readonly panels: ConfigPanels;
  private readonly doc: Document;
  private readonly badge: HTMLElement;
  private ws: WsLike | null = null;

  constructor(private readonly root: HTMLElement, private readonly wsFactory: WsFactory,
              private readonly wsUrl: string) {
    this.doc = root.ownerDocument;
    const doc = this.doc;
    this.state = initialState();

    const header = doc.createElement("header");
    this.badge = doc.createElement("span");
    this.badge.id = "status-badge";
    this.badge.textContent = "disconnected";
    header.appendChild(this.badge);
    for (const op of ["connect", "start", "stop", "disconnect"] as const) {
      const button = doc.createElement("button");
      button.id = `btn-${op}`;
      button.textContent = op;
      button.addEventListener("click", () => this.sendOp({ op }));
      header.appendChild(button);
    }
    root.appendChild(header);

    const charts = doc.createElement("div");
    charts.className = "charts";
    this.processChart = new StripChart(doc, [
      { key: "r", label: "setpoint", color: "#888", interpolation: "linear" },
      { key: "y", label: "process output", color: "#0a6", interpolation: "linear" },
      { key: "sampled", label: "sampler output", color: "#d60", interpolation: "step" },
    ], { yLabel: "level (cm)" });
    this.controlChart = new StripChart(doc, [
      { key: "u", label: "controller output", color: "#06c", interpolation: "linear" },
      { key: "sampled", label: "sampler output", color: "#d60", interpolation: "step" },
    ], { yLabel: "pump (V)" });
    const processPane = doc.createElement("figure");
    processPane.id = "process-chart";
    processPane.appendChild(this.processChart.svg);
    const controlPane = doc.createElement("figure");
    controlPane.id = "control-chart";
    controlPane.appendChild(this.controlChart.svg);
    charts.append(processPane, controlPane);
    root.appendChild(charts);

    const panelRoot = doc.createElement("section");
    panelRoot.id = "config-panels";
    root.appendChild(panelRoot);
    this.panels = new ConfigPanels(doc, panelRoot, (msg) => this.sendOp(msg));
  }

  connect(): void {
    this.ws = this.wsFactory(this.wsUrl);
    this.ws.onmessage = (ev) => {
      let parsed: unknown;
      try {
        parsed = JSON.parse(String(ev.data));
      } catch {
        console.warn("non-JSON frame from service");
        return;
      }
      this.handleMessage(parsed);
    };
    this.ws.onclose = () => {
      this.state.connection = "disconnected";
      this.renderStatus();
    };
  }

  handleMessage(raw: unknown): void {
    const statusBefore = this.state.statusSeen;
    applyMessage(this.state, raw);
    if (this.state.statusSeen !== statusBefore) {
      // every committed change is answered by a status message; treat any
      // status as the acknowledgement that re-enables the commit buttons
      this.panels.onAck();
      this.panels.setRole(this.state.role);
      if (this.state.config) {
        this.panels.populate(this.state.config, this.state.placement);
      }
      this.renderStatus();
    }
  }

  sendOp(msg: OutboundMsg): void {
    if (this.ws === null) return;
    this.ws.send(JSON.stringify(msg));
  }

  private renderStatus(): void {
    const role = this.state.role === "unknown" ? "" : ` (${this.state.role})`;
    this.badge.textContent = `${this.state.connection}${role}`;
    this.badge.dataset.state = this.state.connection;
    this.badge.dataset.role = this.state.role;
  }

  // Redraws both charts from the buffers; the sampled overlay is routed to
  // the pane matching the placement and blanked on the other one.
  renderCharts(): void {
    const b = this.state.buffers;
    const data = {
      t: b.t.toArray(), r: b.r.toArray(), y: b.y.toArray(),
      u: b.u.toArray(), sampled: b.sampled.toArray(),
    };
    const empty: number[] = [];
    if (this.state.placement === "error") {
      this.processChart.render({ ...data });
      this.controlChart.render({ ...data, sampled: empty });
    } else {
      this.processChart.render({ ...data, sampled: empty });
      this.controlChart.render({ ...data });
    }
  }

  startRenderLoop(intervalMs = 100): () => void {
    const id = setInterval(() => this.renderCharts(), intervalMs);
    return () => clearInterval(id);
  }

  close(): void {
    this.ws?.close();
    this.ws = null;
  }
}
