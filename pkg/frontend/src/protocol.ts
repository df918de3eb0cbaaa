// Wire protocol schemas. Every outbound frame is validated before send and
// every inbound frame is parsed against these shapes; anything malformed is
// surfaced to the caller instead of crashing the session.
import { z } from 'zod';

const vec3 = z.tuple([z.number(), z.number(), z.number()]);

export const helloSchema = z.object({
  type: z.literal('hello'),
  scenario: z.string(),
  stream_hz: z.number().positive(),
  chain: z.object({
    name: z.string(),
    dh: z.array(z.array(z.number()).length(4)).min(1),
    q_lower: z.array(z.number()),
    q_upper: z.array(z.number()),
    reach: z.number().positive(),
  }),
  workspace: z.object({ min: vec3, max: vec3 }),
  home_wrist: vec3,
  objects: z.array(z.object({ shape: z.string(), dims: vec3, pose: vec3 })),
});

export const stateSchema = z.object({
  type: z.literal('state'),
  t: z.number(),
  phase: z.enum(['homing', 'pregrasp', 'grasp', 'manipulate', 'release']),
  q: z.array(z.number()).length(7),
  ee_pose: z.array(z.number()).length(7),
  wrist: vec3,
  tactile: z.object({ D: vec3, f: vec3, slip: z.boolean() }),
  detections: z.array(z.object({ shape: z.string(), pose: vec3, dims: vec3 })),
  objects: z.array(z.object({ shape: z.string(), dims: vec3, pose: vec3 })),
});

export const ackSchema = z.object({ type: z.literal('ack'), command: z.string() });

export const errorSchema = z.object({
  type: z.literal('error'),
  code: z.string(),
  reason: z.string(),
});

export const serverFrameSchema = z.discriminatedUnion('type', [
  helloSchema,
  stateSchema,
  ackSchema,
  errorSchema,
]);

export const wristPoseSchema = z.object({
  type: z.literal('wrist_pose'),
  xyz: vec3.refine((v) => v.every(Number.isFinite), 'xyz must be finite'),
});

export const gestureSchema = z.object({
  type: z.literal('gesture'),
  name: z.enum(['open_palm', 'home']),
});

export const placeObjectSchema = z.object({
  type: z.literal('place_object'),
  shape: z.string().min(1),
  dims: vec3.refine((v) => v.every((x) => x > 0), 'dims must be positive'),
  pose: vec3,
  yaw: z.number().optional(),
});

export const resetSchema = z.object({ type: z.literal('reset') });

export const clientFrameSchema = z.discriminatedUnion('type', [
  wristPoseSchema,
  gestureSchema,
  placeObjectSchema,
  resetSchema,
]);

export type Hello = z.infer<typeof helloSchema>;
export type StateFrame = z.infer<typeof stateSchema>;
export type ServerFrame = z.infer<typeof serverFrameSchema>;
export type ClientFrame = z.infer<typeof clientFrameSchema>;

export function parseServerFrame(raw: string): ServerFrame | null {
  try {
    return serverFrameSchema.parse(JSON.parse(raw));
  } catch {
    return null;
  }
}

export function encodeClientFrame(frame: ClientFrame): string {
  return JSON.stringify(clientFrameSchema.parse(frame));
}
