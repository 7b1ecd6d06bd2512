// Client-side state: ring-buffered sample history plus connection status.
// The buffers hold exactly the received sample stream; the only data loss
// is ring-buffer eviction once capacity is reached.

import { Placement, ServiceConfig, UiMessage, parseMessage } from "./types.js";

export const DEFAULT_CAPACITY = 10000;

export class RingBuffer {
  private data: Float64Array;
  private start = 0;
  private count = 0;

  constructor(readonly capacity: number = DEFAULT_CAPACITY) {
    if (capacity < 1) throw new Error("capacity must be at least 1");
    this.data = new Float64Array(capacity);
  }

  push(value: number): void {
    const end = (this.start + this.count) % this.capacity;
    this.data[end] = value;
    if (this.count < this.capacity) {
      this.count += 1;
    } else {
      this.start = (this.start + 1) % this.capacity;
    }
  }

  get length(): number {
    return this.count;
  }

  at(index: number): number {
    if (index < 0 || index >= this.count) throw new RangeError(`index ${index}`);
    return this.data[(this.start + index) % this.capacity];
  }

  last(): number | undefined {
    return this.count === 0 ? undefined : this.at(this.count - 1);
  }

  toArray(): number[] {
    const out = new Array<number>(this.count);
    for (let i = 0; i < this.count; i++) out[i] = this.at(i);
    return out;
  }
}

export interface SampleBuffers {
  t: RingBuffer;
  r: RingBuffer;
  y: RingBuffer;
  u: RingBuffer;
  sampled: RingBuffer;
  event: RingBuffer; // 0/1 flags
}

export interface UiState {
  connection: string;                      // service loop state
  role: "controller" | "observer" | "unknown";
  detail: string;
  placement: Placement;
  config: ServiceConfig | null;            // last config announced by the service
  buffers: SampleBuffers;
  samplesSeen: number;
  statusSeen: number;
}

export function initialState(capacity: number = DEFAULT_CAPACITY): UiState {
  return {
    connection: "disconnected",
    role: "unknown",
    detail: "",
    placement: "control",
    config: null,
    buffers: {
      t: new RingBuffer(capacity),
      r: new RingBuffer(capacity),
      y: new RingBuffer(capacity),
      u: new RingBuffer(capacity),
      sampled: new RingBuffer(capacity),
      event: new RingBuffer(capacity),
    },
    samplesSeen: 0,
    statusSeen: 0,
  };
}

// Applies one service message; unknown or malformed input leaves the state
// untouched (a console warning is the only side effect).
export function applyMessage(state: UiState, raw: unknown): UiState {
  const msg: UiMessage | null = parseMessage(raw);
  if (msg === null) {
    console.warn("ignoring unrecognized message", raw);
    return state;
  }
  if (msg.op === "sample") {
    const b = state.buffers;
    b.t.push(msg.t);
    b.r.push(msg.r);
    b.y.push(msg.y);
    b.u.push(msg.u);
    b.sampled.push(msg.sampled);
    b.event.push(msg.event ? 1 : 0);
    state.samplesSeen += 1;
    return state;
  }
  state.connection = msg.state;
  state.detail = msg.detail ?? "";
  if (msg.role === "controller" || msg.role === "observer") state.role = msg.role;
  if (msg.placement === "error" || msg.placement === "control") {
    state.placement = msg.placement;
  }
  if (msg.config) state.config = msg.config;
  state.statusSeen += 1;
  return state;
}
