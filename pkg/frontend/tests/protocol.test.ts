import { describe, expect, it } from 'vitest';
import {
  encodeClientFrame,
  parseServerFrame,
  stateSchema,
} from '../src/protocol.js';

const goodState = {
  type: 'state',
  t: 1.25,
  phase: 'pregrasp',
  q: [0, 0.6, 0, -0.9, 0, 1.6, 0],
  ee_pose: [0.4, 0, 0.3, 0, 0, 1, 0],
  wrist: [0.45, 0.0, 0.09],
  tactile: { D: [0, 0, 0], f: [0, 0, 0], slip: false },
  detections: [{ shape: 'block', pose: [0.4, 0, 0.01], dims: [0.04, 0.04, 0.02] }],
  objects: [{ shape: 'block', dims: [0.04, 0.04, 0.02], pose: [0.4, 0, 0.01] }],
};

describe('server frames', () => {
  it('parses a valid state frame', () => {
    const frame = parseServerFrame(JSON.stringify(goodState));
    expect(frame?.type).toBe('state');
    expect(stateSchema.parse(goodState).phase).toBe('pregrasp');
  });

  it('rejects malformed frames without throwing', () => {
    expect(parseServerFrame('{ not json')).toBeNull();
    expect(parseServerFrame(JSON.stringify({ type: 'state', t: 'oops' }))).toBeNull();
    expect(parseServerFrame(JSON.stringify({ type: 'mystery' }))).toBeNull();
    const badPhase = { ...goodState, phase: 'launching' };
    expect(parseServerFrame(JSON.stringify(badPhase))).toBeNull();
  });

  it('parses error frames', () => {
    const frame = parseServerFrame(JSON.stringify({ type: 'error', code: 'bad_phase', reason: 'x' }));
    expect(frame?.type).toBe('error');
  });
});

describe('client frames', () => {
  it('encodes valid commands', () => {
    expect(JSON.parse(encodeClientFrame({ type: 'wrist_pose', xyz: [0.4, 0, 0.1] }))).toEqual({
      type: 'wrist_pose',
      xyz: [0.4, 0, 0.1],
    });
    expect(JSON.parse(encodeClientFrame({ type: 'gesture', name: 'open_palm' })).name).toBe('open_palm');
  });

  it('refuses invalid commands before they reach the wire', () => {
    expect(() => encodeClientFrame({ type: 'wrist_pose', xyz: [NaN, 0, 0] } as never)).toThrow();
    expect(() => encodeClientFrame({ type: 'gesture', name: 'wave' } as never)).toThrow();
    expect(() =>
      encodeClientFrame({ type: 'place_object', shape: '', dims: [0.1, 0.1, 0.1], pose: [0, 0, 0] } as never),
    ).toThrow();
    expect(() =>
      encodeClientFrame({ type: 'place_object', shape: 'rod', dims: [0, 0.1, 0.1], pose: [0, 0, 0] } as never),
    ).toThrow();
  });
});
