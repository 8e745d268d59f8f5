// Session protocol schemas shared by the console and its tests.
// Every outgoing message is validated before it is sent.

import { z } from "zod";

export const vec3 = z.tuple([z.number(), z.number(), z.number()]);

export const clientMessage = z.object({
  type: z.enum([
    "start_replay",
    "start_rollout",
    "residual_delta",
    "set_mode",
    "grasp",
    "release",
    "pause",
    "resume",
    "finalize",
  ]),
  session_id: z.string().nullable().optional(),
  payload: z.record(z.unknown()),
});
export type ClientMessage = z.infer<typeof clientMessage>;

export const poseSchema = z.object({
  p: z.array(z.number()).length(3),
  q: z.array(z.number()).length(4),
});

export const armSnapshot = z.object({
  ee: poseSchema,
  gripper: z.string(),
  held: z.string().nullable(),
});

export const objectSnapshot = z.object({
  cls: z.string(),
  pose: poseSchema,
  radius: z.number(),
  height: z.number(),
  held_by: z.string().nullable(),
  support: z.string().nullable(),
});

export const snapshotPayload = z.object({
  tick: z.number(),
  time: z.number(),
  mode: z.string(),
  paused: z.boolean(),
  done: z.boolean(),
  arms: z.record(armSnapshot),
  objects: z.record(objectSnapshot),
});
export type Snapshot = z.infer<typeof snapshotPayload>;

export const serverMessage = z.object({
  type: z.enum(["state_snapshot", "event", "outcome", "error"]),
  session_id: z.string().nullable().optional(),
  payload: z.record(z.unknown()),
});
export type ServerMessage = z.infer<typeof serverMessage>;

export function makeMessage(
  type: ClientMessage["type"],
  payload: Record<string, unknown> = {},
): string {
  const msg: ClientMessage = clientMessage.parse({ type, payload });
  return JSON.stringify(msg);
}

export function parseServer(raw: string): ServerMessage | null {
  try {
    return serverMessage.parse(JSON.parse(raw));
  } catch {
    return null;
  }
}
