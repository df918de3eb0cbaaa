// Connection/session state machine, deliberately DOM-free so the same code
// runs in the browser and under node tests. The session never extrapolates
// robot state: it renders only what the server last acknowledged, keeping a
// single latest frame (inbound frames are applied on arrival, so there is
// no client-side queue to grow).
import {
  ClientFrame,
  Hello,
  StateFrame,
  encodeClientFrame,
  parseServerFrame,
} from './protocol.js';

export type SocketLike = {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
};

export type SocketFactory = (url: string) => SocketLike;

export type ConnectionStatus = 'connecting' | 'connected' | 'disconnected';

export interface SessionStats {
  framesReceived: number;
  statesApplied: number;
  malformedFrames: number;
  errorsReceived: number;
  reconnects: number;
  maxPending: number;
}

export interface SessionEvents {
  onUpdate?: () => void;
  onServerError?: (code: string, reason: string) => void;
}

const BACKOFF_BASE_MS = 500;
const BACKOFF_CAP_MS = 8000;

export class Session {
  status: ConnectionStatus = 'disconnected';
  hello: Hello | null = null;
  latest: StateFrame | null = null;
  lastError: { code: string; reason: string } | null = null;
  stats: SessionStats = {
    framesReceived: 0,
    statesApplied: 0,
    malformedFrames: 0,
    errorsReceived: 0,
    reconnects: 0,
    maxPending: 0,
  };

  private socket: SocketLike | null = null;
  private url = '';
  private attempts = 0;
  private closedByUser = false;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;
  private pending = 0;

  constructor(
    private factory: SocketFactory,
    private events: SessionEvents = {},
  ) {}

  connect(url: string): void {
    this.url = url;
    this.closedByUser = false;
    this.open();
  }

  close(): void {
    this.closedByUser = true;
    if (this.reconnectTimer !== null) clearTimeout(this.reconnectTimer);
    this.socket?.close();
    this.status = 'disconnected';
  }

  get phase(): string | null {
    return this.latest?.phase ?? null;
  }

  sendWrist(xyz: [number, number, number]): void {
    this.send({ type: 'wrist_pose', xyz });
  }

  sendGesture(name: 'open_palm' | 'home'): void {
    this.send({ type: 'gesture', name });
  }

  placeObject(shape: string, dims: [number, number, number], pose: [number, number, number]): void {
    this.send({ type: 'place_object', shape, dims, pose });
  }

  reset(): void {
    this.send({ type: 'reset' });
  }

  private send(frame: ClientFrame): void {
    if (this.status !== 'connected' || !this.socket) {
      throw new Error('not connected');
    }
    // Throws on schema violation before anything reaches the wire.
    this.socket.send(encodeClientFrame(frame));
  }

  private open(): void {
    this.status = 'connecting';
    this.events.onUpdate?.();
    const socket = this.factory(this.url);
    this.socket = socket;
    socket.onopen = () => {
      this.status = 'connected';
      this.attempts = 0;
      this.events.onUpdate?.();
    };
    socket.onmessage = (ev) => this.handleMessage(String(ev.data));
    socket.onerror = () => {
      // close follows; backoff handled there
    };
    socket.onclose = () => {
      if (this.socket !== socket) return;
      this.status = 'disconnected';
      this.events.onUpdate?.();
      if (!this.closedByUser) this.scheduleReconnect();
    };
  }

  private scheduleReconnect(): void {
    const delay = Math.min(BACKOFF_BASE_MS * 2 ** this.attempts, BACKOFF_CAP_MS);
    this.attempts += 1;
    this.stats.reconnects += 1;
    this.reconnectTimer = setTimeout(() => this.open(), delay);
  }

  private handleMessage(raw: string): void {
    this.pending += 1;
    this.stats.maxPending = Math.max(this.stats.maxPending, this.pending);
    this.stats.framesReceived += 1;
    const frame = parseServerFrame(raw);
    if (frame === null) {
      this.stats.malformedFrames += 1;
      this.pending -= 1;
      return; // logged by callers via stats; the session survives
    }
    switch (frame.type) {
      case 'hello':
        this.hello = frame;
        break;
      case 'state':
        this.latest = frame; // only the latest frame is retained
        this.stats.statesApplied += 1;
        break;
      case 'error':
        this.lastError = { code: frame.code, reason: frame.reason };
        this.stats.errorsReceived += 1;
        this.events.onServerError?.(frame.code, frame.reason);
        break;
      case 'ack':
        break;
    }
    this.pending -= 1;
    this.events.onUpdate?.();
  }
}
