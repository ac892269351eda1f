/**
 * Wire contract with the chat gateway.
 *
 * The simulator plays the messaging platform: it signs webhook envelopes
 * with the shared channel secret and delivers them to the gateway, and it
 * validates the reply payloads the gateway posts back. Schemas mirror the
 * gateway's inbound models field for field; the committed fixtures in
 * fixtures/envelopes.json pin the byte-level encoding.
 */

import { createHmac, timingSafeEqual } from "node:crypto";
import { z } from "zod";

export const SIGNATURE_HEADER = "x-line-signature";

// ---- schemas (inbound side of the gateway) ---------------------------------

export const WebhookSourceSchema = z.object({
  type: z.string().default("user"),
  userId: z.string().nullish(),
  groupId: z.string().nullish(),
});

export const WebhookMessageSchema = z.object({
  id: z.string(),
  type: z.string(),
  text: z.string().nullish(),
});

export const WebhookEventSchema = z.object({
  type: z.string(),
  timestamp: z.number().int().default(0),
  source: WebhookSourceSchema.default({ type: "user" }),
  replyToken: z.string().nullish(),
  message: WebhookMessageSchema.nullish(),
});

export const WebhookEnvelopeSchema = z.object({
  destination: z.string().default(""),
  events: z.array(WebhookEventSchema).default([]),
});

export const WebhookAckSchema = z.object({
  status: z.literal("ok"),
  accepted: z.number().int(),
  duplicates: z.number().int(),
});
export type WebhookAck = z.infer<typeof WebhookAckSchema>;

// Outbound bundle the gateway posts to /v1/message/reply. Strict here: the
// simulator is the peer that checks the gateway's output.
export const OutboundImageSchema = z
  .object({
    type: z.literal("image"),
    originalContentUrl: z.string().min(1),
    previewImageUrl: z.string().min(1),
  })
  .strict();

export const OutboundTextSchema = z
  .object({
    type: z.literal("text"),
    text: z.string().min(1),
  })
  .strict();

export const OutboundMessageSchema = z.union([OutboundImageSchema, OutboundTextSchema]);
export type OutboundMessage = z.infer<typeof OutboundMessageSchema>;

export const ReplyRequestSchema = z
  .object({
    replyToken: z.string().min(1),
    messages: z.array(OutboundMessageSchema).min(1).max(5),
  })
  .strict();
export type ReplyRequest = z.infer<typeof ReplyRequestSchema>;

// ---- envelope construction --------------------------------------------------

export interface ImageEventSpec {
  kind: "image";
  messageId: string;
  userId: string;
  groupId?: string;
  replyToken: string;
  timestampMs: number;
}

export interface TextEventSpec {
  kind: "text";
  messageId: string;
  userId: string;
  groupId?: string;
  replyToken: string;
  timestampMs: number;
  text: string;
}

export type EventSpec = ImageEventSpec | TextEventSpec;

function buildSource(userId: string, groupId?: string) {
  // Key order matters: the committed fixtures pin these exact bytes.
  return groupId
    ? { type: "group", userId, groupId }
    : { type: "user", userId };
}

export function buildEvent(spec: EventSpec) {
  const message =
    spec.kind === "image"
      ? { id: spec.messageId, type: "image" }
      : { id: spec.messageId, type: "text", text: spec.text };
  return {
    type: "message",
    timestamp: spec.timestampMs,
    source: buildSource(spec.userId, spec.groupId),
    replyToken: spec.replyToken,
    message,
  };
}

/** Serialize an envelope to the exact bytes that get signed and sent. */
export function envelopeBody(destination: string, specs: EventSpec[]): string {
  return JSON.stringify({ destination, events: specs.map(buildEvent) });
}

export function sign(secret: string, body: string): string {
  return createHmac("sha256", secret).update(body, "utf8").digest("base64");
}

export function signatureValid(secret: string, body: string, signature: string): boolean {
  const expected = Buffer.from(sign(secret, body));
  const got = Buffer.from(signature);
  return expected.length === got.length && timingSafeEqual(expected, got);
}

// ---- delivery ----------------------------------------------------------------

export interface DeliveryResult {
  ok: boolean;
  status?: number;
  ack?: WebhookAck;
  error?: string;
}

export type FetchLike = (url: string, init: RequestInit) => Promise<Response>;

export async function deliverWebhook(
  gatewayUrl: string,
  secret: string,
  body: string,
  fetchImpl: FetchLike = fetch,
): Promise<DeliveryResult> {
  let response: Response;
  try {
    response = await fetchImpl(`${gatewayUrl.replace(/\/$/, "")}/webhook`, {
      method: "POST",
      headers: {
        "content-type": "application/json",
        "x-line-signature": sign(secret, body),
      },
      body,
    });
  } catch (err) {
    return { ok: false, error: `gateway unreachable: ${String(err)}` };
  }
  if (!response.ok) {
    const text = await response.text().catch(() => "");
    return { ok: false, status: response.status, error: text || response.statusText };
  }
  const parsed = WebhookAckSchema.safeParse(await response.json().catch(() => null));
  if (!parsed.success) {
    return { ok: false, status: response.status, error: "malformed ack from gateway" };
  }
  return { ok: true, status: response.status, ack: parsed.data };
}
