// End-to-end against a live harness: spawns `isot serve`, drives the leader
// through the console's own session machinery, and soaks the 30 Hz stream.
import { ChildProcess, spawn } from 'node:child_process';
import { afterAll, beforeAll, describe, expect, it } from 'vitest';
import WebSocket from 'ws';
import { Session, SocketLike } from '../src/session.js';

const PORT = 8912;
const URL = `ws://127.0.0.1:${PORT}`;

let server: ChildProcess;

function nodeSocketFactory(url: string): SocketLike {
  return new WebSocket(url) as unknown as SocketLike;
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

async function waitFor(pred: () => boolean, timeoutMs: number, what: string): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (!pred()) {
    if (Date.now() > deadline) throw new Error(`timeout waiting for ${what}`);
    await sleep(50);
  }
}

beforeAll(async () => {
  server = spawn('isot', ['serve', '--scenario', 'interactive', '--port', String(PORT), '--speed', '4'], {
    stdio: 'ignore',
  });
  // wait until the port accepts a connection
  const probe = new Session(nodeSocketFactory);
  probe.connect(URL);
  await waitFor(() => probe.hello !== null, 20_000, 'server startup');
  probe.close();
  await sleep(200);
}, 30_000);

afterAll(() => {
  server?.kill();
});

describe('live console session', () => {
  it('drag wrist -> PreGrasp badge; open palm during Manipulate -> Release badge', async () => {
    const session = new Session(nodeSocketFactory);
    session.connect(URL);
    await waitFor(() => session.status === 'connected' && session.hello !== null, 10_000, 'connect');
    await waitFor(() => session.latest !== null, 10_000, 'first state');
    expect(session.phase).toBe('homing');

    // drag the wrist over the table object: an active held posture
    const obj = session.hello!.objects[0];
    session.sendWrist([obj.pose[0], obj.pose[1], 0.09]);
    await waitFor(() => session.phase === 'pregrasp', 30_000, 'pregrasp badge');

    await waitFor(() => session.phase === 'manipulate', 60_000, 'manipulate badge');
    session.sendGesture('open_palm');
    await waitFor(() => session.phase === 'release', 20_000, 'release badge');

    // leader returns to rest: park the wrist home first so the follower
    // settles in homing instead of starting the next approach
    const home = session.hello!.home_wrist;
    session.sendWrist([home[0], home[1], home[2]]);
    session.sendGesture('home');
    await waitFor(() => session.phase === 'homing', 30_000, 'back to homing');
    session.close();
  }, 150_000);

  it('soaks 60 s at 30 Hz without client-side queue growth', async () => {
    const session = new Session(nodeSocketFactory);
    session.connect(URL);
    await waitFor(() => session.latest !== null, 10_000, 'stream');
    const before = session.stats.statesApplied;
    await sleep(60_000);
    const applied = session.stats.statesApplied - before;
    // 30 Hz nominal; allow scheduling slack on a loaded box
    expect(applied).toBeGreaterThan(1500);
    expect(session.stats.maxPending).toBeLessThanOrEqual(2);
    expect(session.stats.framesReceived - session.stats.statesApplied).toBeLessThanOrEqual(2);
    expect(session.latest).not.toBeNull();
    session.close();
  }, 90_000);

  it('rejected commands surface their reason codes', async () => {
    const session = new Session(nodeSocketFactory);
    session.connect(URL);
    await waitFor(() => session.latest !== null, 10_000, 'stream');
    session.reset();
    await waitFor(() => session.phase === 'homing', 20_000, 'reset to homing');
    session.sendGesture('open_palm'); // homing: incompatible phase
    await waitFor(() => session.lastError !== null, 10_000, 'rejection');
    expect(session.lastError!.code).toBe('bad_phase');
    session.close();
  }, 60_000);
});
