// Browser entry: wires the session to the DOM. Drag the wrist marker in
// either pane, trigger gestures, place objects, and watch the follower and
// its phase respond live.
import { Session } from './session.js';
import { Pane, drawPane, makePane, paneToWorld, phaseColor } from './render.js';

const url = new URLSearchParams(location.search).get('ws') ?? 'ws://127.0.0.1:8765';

const badge = document.getElementById('phase') as HTMLSpanElement;
const banner = document.getElementById('banner') as HTMLDivElement;
const gauge = document.getElementById('force-gauge') as HTMLDivElement;
const gaugeLabel = document.getElementById('force-label') as HTMLSpanElement;
const slipLight = document.getElementById('slip') as HTMLSpanElement;
const errorBox = document.getElementById('errors') as HTMLDivElement;
const topCanvas = document.getElementById('top') as HTMLCanvasElement;
const sideCanvas = document.getElementById('side') as HTMLCanvasElement;

let panes: { top: Pane; side: Pane } | null = null;
let wristZ = 0.09;
let wristXY: [number, number] = [0.45, 0.0];

const session = new Session((u) => new WebSocket(u) as never, {
  onUpdate: render,
  onServerError: (code, reason) => {
    const line = document.createElement('div');
    line.textContent = `${code}: ${reason}`;
    errorBox.prepend(line);
    while (errorBox.childElementCount > 6) errorBox.lastElementChild?.remove();
  },
});
session.connect(url);

function ensurePanes(): void {
  if (panes || !session.hello) return;
  const ws = session.hello.workspace;
  panes = {
    top: makePane(topCanvas, [0, 1], [ws.min[0], ws.min[1]], [ws.max[0], ws.max[1]]),
    side: makePane(sideCanvas, [0, 2], [ws.min[0], ws.min[2]], [ws.max[0], ws.max[2]]),
  };
}

function render(): void {
  banner.style.display = session.status === 'connected' ? 'none' : 'block';
  banner.textContent = session.status === 'connecting'
    ? 'connecting…' : 'disconnected — retrying';
  ensurePanes();
  if (!session.hello || !panes) return;
  const state = session.latest;
  if (state) {
    badge.textContent = state.phase;
    badge.style.background = phaseColor(state.phase);
    const f = Math.hypot(...state.tactile.f);
    gauge.style.width = `${Math.min(100, f * 12)}%`;
    gaugeLabel.textContent = `${f.toFixed(2)} N`;
    slipLight.classList.toggle('on', state.tactile.slip);
  }
  drawPane(panes.top, session.hello, state);
  drawPane(panes.side, session.hello, state);
}

function sendWrist(): void {
  try {
    session.sendWrist([wristXY[0], wristXY[1], wristZ]);
  } catch {
    // not connected yet; the next drag retries
  }
}

function attachDrag(canvas: HTMLCanvasElement, which: 'top' | 'side'): void {
  let dragging = false;
  const update = (ev: PointerEvent) => {
    if (!panes) return;
    const rect = canvas.getBoundingClientRect();
    const [a, b] = paneToWorld(panes[which], ev.clientX - rect.left, ev.clientY - rect.top);
    if (which === 'top') wristXY = [a, b];
    else {
      wristXY = [a, wristXY[1]];
      wristZ = Math.max(0.01, b);
    }
    sendWrist();
  };
  canvas.addEventListener('pointerdown', (ev) => {
    dragging = true;
    canvas.setPointerCapture(ev.pointerId);
    update(ev);
  });
  canvas.addEventListener('pointermove', (ev) => dragging && update(ev));
  canvas.addEventListener('pointerup', () => (dragging = false));
}

attachDrag(topCanvas, 'top');
attachDrag(sideCanvas, 'side');

(document.getElementById('open-palm') as HTMLButtonElement).onclick = () =>
  safeSend(() => session.sendGesture('open_palm'));
(document.getElementById('go-home') as HTMLButtonElement).onclick = () =>
  safeSend(() => session.sendGesture('home'));
(document.getElementById('reset') as HTMLButtonElement).onclick = () =>
  safeSend(() => session.reset());
(document.getElementById('place') as HTMLButtonElement).onclick = () => {
  const shape = (document.getElementById('obj-shape') as HTMLSelectElement).value;
  const x = Number((document.getElementById('obj-x') as HTMLInputElement).value);
  const y = Number((document.getElementById('obj-y') as HTMLInputElement).value);
  safeSend(() => session.placeObject(shape, [0.04, 0.04, 0.024], [x, y, 0.012]));
};

function safeSend(fn: () => void): void {
  try {
    fn();
  } catch (err) {
    const line = document.createElement('div');
    line.textContent = String(err);
    errorBox.prepend(line);
  }
}
