/**
 * The simulator's HTTP surface, two contracts on one port.
 *
 * Platform side (what the gateway calls): GET /v1/message/{id}/content and
 * POST /v1/message/reply, so the gateway's outbound client runs against the
 * simulator exactly as it would against the real platform.
 *
 * Simulator side (what the browser calls): a small JSON API for the
 * timeline, persona switching, and posting messages, plus the static chat
 * page. Posting a message stores it in the session and delivers a signed
 * webhook envelope to the gateway.
 */

import express, { type Express } from "express";
import * as fs from "node:fs";
import * as path from "node:path";
import { ReplyTokenError, SessionStore, type SimUser } from "./session";
import {
  deliverWebhook,
  envelopeBody,
  ReplyRequestSchema,
  type EventSpec,
  type FetchLike,
} from "./wire";

export interface SimulatorOptions {
  sessionDir: string;
  gatewayUrl: string;
  channelSecret: string;
  destination?: string;
  samplesDir?: string;
  fetchImpl?: FetchLike;
}

export interface Simulator {
  app: Express;
  session: SessionStore;
  samples: () => string[];
  postImage: (label: string, bytes: Buffer, contentType: string) => Promise<object>;
  postSample: (name: string) => Promise<object>;
  postText: (text: string) => Promise<object>;
  gatewayUrl: () => string;
  /** Point webhook delivery somewhere else, e.g. once a spawned gateway's port is known. */
  setGatewayUrl: (url: string) => void;
}

const DEFAULT_SAMPLES_DIR = path.join(__dirname, "..", "fixtures", "images");

export function createSimulator(options: SimulatorOptions): Simulator {
  const session = new SessionStore(options.sessionDir);
  const samplesDir = options.samplesDir ?? DEFAULT_SAMPLES_DIR;
  const destination = options.destination ?? "sim-bot";
  const fetchImpl = options.fetchImpl ?? (fetch as FetchLike);
  let gatewayUrl = options.gatewayUrl;

  const listSamples = (): string[] => {
    if (!fs.existsSync(samplesDir)) return [];
    return fs
      .readdirSync(samplesDir)
      .filter((name) => name.endsWith(".png"))
      .map((name) => name.replace(/\.png$/, ""))
      .sort();
  };

  const deliver = async (user: SimUser, spec: EventSpec, seq: number) => {
    const body = envelopeBody(destination, [spec]);
    const delivery = await deliverWebhook(gatewayUrl, options.channelSecret, body, fetchImpl);
    session.attachDelivery(seq, delivery);
    return delivery;
  };

  const postImage = async (label: string, bytes: Buffer, contentType: string) => {
    const user = session.activeUser();
    const message = session.addUserImage(user, bytes, contentType, label);
    const spec: EventSpec = {
      kind: "image",
      messageId: message.platformMessageId!,
      userId: user.id,
      groupId: session.groupId,
      replyToken: session.issueReplyToken(message.platformMessageId!),
      timestampMs: message.timestampMs,
    };
    const delivery = await deliver(user, spec, message.seq);
    return { message: { ...message, delivery }, delivery };
  };

  const postSample = async (name: string) => {
    if (!/^[\w-]+$/.test(name) || !listSamples().includes(name)) {
      throw new Error(`no such sample: ${name}`);
    }
    const bytes = fs.readFileSync(path.join(samplesDir, `${name}.png`));
    return postImage(`${name}.png`, bytes, "image/png");
  };

  const postText = async (text: string) => {
    const user = session.activeUser();
    const message = session.addUserText(user, text);
    const spec: EventSpec = {
      kind: "text",
      messageId: message.platformMessageId!,
      userId: user.id,
      groupId: session.groupId,
      replyToken: session.issueReplyToken(message.platformMessageId!),
      timestampMs: message.timestampMs,
      text,
    };
    const delivery = await deliver(user, spec, message.seq);
    return { message: { ...message, delivery }, delivery };
  };

  const app = express();
  app.use(express.json({ limit: "12mb" }));

  // ---- platform side ----

  app.get("/v1/message/:id/content", (req, res) => {
    const record = session.content(req.params.id);
    if (!record) {
      res.status(404).json({ message: `no content behind ${req.params.id}` });
      return;
    }
    res.setHeader("content-type", record.contentType);
    res.send(record.bytes);
  });

  app.post("/v1/message/reply", (req, res) => {
    const parsed = ReplyRequestSchema.safeParse(req.body);
    if (!parsed.success) {
      res.status(400).json({ message: parsed.error.message });
      return;
    }
    let sourceMessageId: string;
    try {
      sourceMessageId = session.consumeReplyToken(parsed.data.replyToken);
    } catch (err) {
      if (err instanceof ReplyTokenError) {
        res.status(err.status).json({ message: err.message });
        return;
      }
      throw err;
    }
    const appended = session.appendBotMessages(sourceMessageId, parsed.data.messages);
    res.json({ sentMessages: appended.map((m) => ({ id: `sim-sent-${m.seq}` })) });
  });

  // ---- simulator side ----

  app.get("/api/state", (req, res) => {
    const since = Number(req.query.since ?? 0) || 0;
    res.json({
      groupId: session.groupId,
      gatewayUrl,
      users: session.users(),
      activeUserId: session.activeUser().id,
      seq: session.seq,
      messages: session.messagesSince(since),
    });
  });

  app.post("/api/user", (req, res) => {
    const userId = String(req.body?.userId ?? "");
    try {
      res.json({ activeUser: session.switchUser(userId) });
    } catch {
      res.status(404).json({ message: `no such user: ${userId}` });
    }
  });

  app.get("/api/samples", (_req, res) => {
    res.json({
      samples: listSamples().map((name) => ({ name, url: `/samples/${name}.png` })),
    });
  });

  app.post("/api/messages/image", (req, res) => {
    const { sample, dataBase64, contentType, label } = req.body ?? {};
    const handle = (work: Promise<object>) =>
      work
        .then((result) => res.json(result))
        .catch((err) => res.status(400).json({ message: String(err?.message ?? err) }));
    if (typeof sample === "string") {
      handle(postSample(sample));
    } else if (typeof dataBase64 === "string") {
      handle(
        postImage(
          typeof label === "string" && label ? label : "upload.png",
          Buffer.from(dataBase64, "base64"),
          typeof contentType === "string" && contentType ? contentType : "image/png",
        ),
      );
    } else {
      res.status(400).json({ message: "body needs sample or dataBase64" });
    }
  });

  app.post("/api/messages/text", (req, res) => {
    const text = String(req.body?.text ?? "").trim();
    if (!text) {
      res.status(400).json({ message: "text must not be empty" });
      return;
    }
    postText(text)
      .then((result) => res.json(result))
      .catch((err) => res.status(400).json({ message: String(err?.message ?? err) }));
  });

  app.use("/samples", express.static(samplesDir));
  app.use(express.static(path.join(__dirname, "..", "public")));

  return {
    app,
    session,
    samples: listSamples,
    postImage,
    postSample,
    postText,
    gatewayUrl: () => gatewayUrl,
    setGatewayUrl: (url: string) => {
      gatewayUrl = url;
    },
  };
}
