// Minimal forward kinematics over the DH rows received at handshake, enough
// to draw the arm silhouette from a joint vector.

export type Vec3 = [number, number, number];
type Mat4 = number[]; // row-major 4x4

function matMul(a: Mat4, b: Mat4): Mat4 {
  const out = new Array(16).fill(0);
  for (let i = 0; i < 4; i++) {
    for (let j = 0; j < 4; j++) {
      let s = 0;
      for (let k = 0; k < 4; k++) s += a[i * 4 + k] * b[k * 4 + j];
      out[i * 4 + j] = s;
    }
  }
  return out;
}

function dhTransform(a: number, alpha: number, d: number, theta: number): Mat4 {
  const ct = Math.cos(theta), st = Math.sin(theta);
  const ca = Math.cos(alpha), sa = Math.sin(alpha);
  return [
    ct, -st * ca, st * sa, a * ct,
    st, ct * ca, -ct * sa, a * st,
    0, sa, ca, d,
    0, 0, 0, 1,
  ];
}

/** Base-frame joint origins (including the base at the origin and the EE). */
export function jointPositions(dh: number[][], q: number[]): Vec3[] {
  const points: Vec3[] = [[0, 0, 0]];
  let T: Mat4 = [1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1];
  for (let i = 0; i < dh.length; i++) {
    const [a, alpha, d, theta0] = dh[i];
    T = matMul(T, dhTransform(a, alpha, d, theta0 + (q[i] ?? 0)));
    points.push([T[3], T[7], T[11]]);
  }
  return points;
}
