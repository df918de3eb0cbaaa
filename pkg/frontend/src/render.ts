// Dual-pane 2D rendering: top view (x-y) and side view (x-z). Pure drawing
// over the latest session state; no simulation logic lives here.
import { Hello, StateFrame } from './protocol.js';
import { jointPositions } from './fk.js';

export interface Pane {
  ctx: CanvasRenderingContext2D;
  width: number;
  height: number;
  axes: [number, number]; // world axes drawn as (horizontal, vertical): 0=x 1=y 2=z
  range: { min: [number, number]; max: [number, number] };
}

export function makePane(
  canvas: HTMLCanvasElement,
  axes: [number, number],
  min: [number, number],
  max: [number, number],
): Pane {
  const ctx = canvas.getContext('2d');
  if (!ctx) throw new Error('canvas 2d context unavailable');
  return { ctx, width: canvas.width, height: canvas.height, axes, range: { min, max } };
}

export function worldToPane(pane: Pane, p: [number, number, number]): [number, number] {
  const [ha, va] = pane.axes;
  const { min, max } = pane.range;
  const u = (p[ha] - min[0]) / (max[0] - min[0]);
  const v = (p[va] - min[1]) / (max[1] - min[1]);
  return [u * pane.width, (1 - v) * pane.height];
}

export function paneToWorld(pane: Pane, px: number, py: number): [number, number] {
  const { min, max } = pane.range;
  return [
    min[0] + (px / pane.width) * (max[0] - min[0]),
    min[1] + (1 - py / pane.height) * (max[1] - min[1]),
  ];
}

export function drawPane(pane: Pane, hello: Hello, state: StateFrame | null): void {
  const { ctx } = pane;
  ctx.clearRect(0, 0, pane.width, pane.height);
  ctx.fillStyle = '#11151c';
  ctx.fillRect(0, 0, pane.width, pane.height);
  ctx.strokeStyle = '#2a3442';
  ctx.strokeRect(0.5, 0.5, pane.width - 1, pane.height - 1);
  if (!state) return;

  for (const obj of state.objects) {
    drawMarker(pane, obj.pose as [number, number, number], '#b8863b', 5);
  }
  for (const det of state.detections) {
    drawMarker(pane, det.pose as [number, number, number], '#3bb873', 3);
  }

  // Arm silhouette from q via the handshake chain geometry.
  const joints = jointPositions(hello.chain.dh, state.q);
  ctx.strokeStyle = '#7aa2f7';
  ctx.lineWidth = 3;
  ctx.beginPath();
  joints.forEach((p, i) => {
    const [x, y] = worldToPane(pane, p);
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.stroke();
  ctx.lineWidth = 1;

  drawMarker(pane, state.wrist as [number, number, number], '#f7768e', 6);
}

function drawMarker(pane: Pane, p: [number, number, number], color: string, r: number): void {
  const [x, y] = worldToPane(pane, p);
  pane.ctx.fillStyle = color;
  pane.ctx.beginPath();
  pane.ctx.arc(x, y, r, 0, 2 * Math.PI);
  pane.ctx.fill();
}

export function phaseColor(phase: string): string {
  switch (phase) {
    case 'homing': return '#565f89';
    case 'pregrasp': return '#7aa2f7';
    case 'grasp': return '#e0af68';
    case 'manipulate': return '#9ece6a';
    case 'release': return '#bb9af7';
    default: return '#c0caf5';
  }
}
