// Message schema spoken over the session-service WebSocket.

export type Placement = "error" | "control";

export interface SampleMsg {
  op: "sample";
  t: number;
  r: number;
  y: number;
  u: number;
  sampled: number;
  event: boolean;
}

export interface ServiceConfig {
  kp: number;
  ki: number;
  kd: number;
  delta: number;
  setpoint: number;
  dt: number;
  decimation: number;
}

export interface StatusMsg {
  op: "status";
  state: string;
  detail?: string;
  role?: string;
  placement?: Placement;
  config?: ServiceConfig;
}

export type UiMessage = SampleMsg | StatusMsg;

export type OutboundMsg =
  | { op: "set_gains"; kp?: number; ki?: number; kd?: number }
  | { op: "set_delta"; delta: number }
  | { op: "set_setpoint"; setpoint: number }
  | { op: "set_placement"; placement: Placement }
  | { op: "start" }
  | { op: "stop" }
  | { op: "connect" }
  | { op: "disconnect" };

function isFiniteNumber(x: unknown): x is number {
  return typeof x === "number" && Number.isFinite(x);
}

export function parseMessage(raw: unknown): UiMessage | null {
  if (typeof raw !== "object" || raw === null) return null;
  const msg = raw as Record<string, unknown>;
  if (msg.op === "sample") {
    if (!isFiniteNumber(msg.t) || !isFiniteNumber(msg.r) || !isFiniteNumber(msg.y) ||
        !isFiniteNumber(msg.u) || !isFiniteNumber(msg.sampled)) {
      return null;
    }
    return {
      op: "sample", t: msg.t, r: msg.r, y: msg.y, u: msg.u,
      sampled: msg.sampled, event: Boolean(msg.event),
    };
  }
  if (msg.op === "status" && typeof msg.state === "string") {
    return msg as unknown as StatusMsg;
  }
  return null;
}
