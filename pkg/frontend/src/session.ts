/**
 * Group chat session state.
 *
 * One simulated group, a few switchable personas, a chronological timeline.
 * Everything is persisted to a JSON file after each mutation so a reload
 * (browser or server) restores the conversation; uploaded image bytes live
 * next to it in a content directory keyed by platform message id.
 *
 * Mutations run on the Node event loop and write synchronously, so timeline
 * updates are serialized by construction.
 */

import { randomBytes } from "node:crypto";
import * as fs from "node:fs";
import * as path from "node:path";
import type { DeliveryResult } from "./wire";

export type Role = "farmer" | "specialist";

export interface SimUser {
  id: string;
  name: string;
  role: Role;
}

export type MessageKind = "image" | "text" | "bot_image" | "bot_text";

export interface SimMessage {
  seq: number;
  kind: MessageKind;
  senderId: string;
  senderName: string;
  senderRole: Role | "bot";
  timestampMs: number;
  /** Job reference like "J7" when the message carries or answers one. */
  jobRef: string | null;
  text?: string;
  /** Human messages: platform id the gateway fetches content by. */
  platformMessageId?: string;
  /** Human image messages: simulator-local URL for the browser preview. */
  contentUrl?: string;
  label?: string;
  /** Bot image messages: gateway-hosted annotated image and preview. */
  originalContentUrl?: string;
  previewImageUrl?: string;
  /** Bot messages: the human message this reply answers. */
  replyToMessageId?: string;
  delivery?: DeliveryResult;
}

interface ReplyTokenState {
  sourceMessageId: string;
  used: boolean;
}

interface ContentRecord {
  file: string;
  contentType: string;
}

interface SessionState {
  version: 1;
  nonce: string;
  groupId: string;
  seq: number;
  activeUserId: string;
  users: SimUser[];
  messages: SimMessage[];
  replyTokens: Record<string, ReplyTokenState>;
  content: Record<string, ContentRecord>;
}

export const DEFAULT_USERS: SimUser[] = [
  { id: "U-farmer-1", name: "Mali", role: "farmer" },
  { id: "U-farmer-2", name: "Somchai", role: "farmer" },
  { id: "U-specialist-1", name: "Dr. Kanya", role: "specialist" },
];

const JOB_REF = /\bJ\d+\b/;

export class ReplyTokenError extends Error {
  constructor(
    message: string,
    public readonly status: 404 | 409,
  ) {
    super(message);
  }
}

export class SessionStore {
  private state: SessionState;
  private readonly stateFile: string;
  private readonly contentDir: string;

  constructor(
    readonly dir: string,
    options: { groupId?: string; users?: SimUser[] } = {},
  ) {
    this.stateFile = path.join(dir, "session.json");
    this.contentDir = path.join(dir, "content");
    fs.mkdirSync(this.contentDir, { recursive: true });
    if (fs.existsSync(this.stateFile)) {
      this.state = JSON.parse(fs.readFileSync(this.stateFile, "utf8")) as SessionState;
    } else {
      const users = options.users ?? DEFAULT_USERS;
      this.state = {
        version: 1,
        nonce: randomBytes(4).toString("hex"),
        groupId: options.groupId ?? "G-sim",
        seq: 0,
        activeUserId: users[0].id,
        users,
        messages: [],
        replyTokens: {},
        content: {},
      };
      this.save();
    }
  }

  // ---- personas ----

  get groupId(): string {
    return this.state.groupId;
  }

  users(): SimUser[] {
    return [...this.state.users];
  }

  activeUser(): SimUser {
    const user = this.state.users.find((u) => u.id === this.state.activeUserId);
    if (!user) throw new Error(`active user ${this.state.activeUserId} missing`);
    return user;
  }

  switchUser(userId: string): SimUser {
    const user = this.state.users.find((u) => u.id === userId);
    if (!user) throw new Error(`no such user: ${userId}`);
    this.state.activeUserId = userId;
    this.save();
    return user;
  }

  // ---- timeline ----

  get seq(): number {
    return this.state.seq;
  }

  messagesSince(sinceSeq: number): SimMessage[] {
    return this.state.messages.filter((m) => m.seq > sinceSeq);
  }

  allMessages(): SimMessage[] {
    return [...this.state.messages];
  }

  nextPlatformMessageId(): string {
    return `sim-${this.state.nonce}-${this.state.seq + 1}`;
  }

  addUserImage(
    user: SimUser,
    bytes: Buffer,
    contentType: string,
    label: string,
  ): SimMessage {
    const platformMessageId = this.nextPlatformMessageId();
    const extension = contentType === "image/png" ? "png" : "bin";
    const file = `${platformMessageId}.${extension}`;
    fs.writeFileSync(path.join(this.contentDir, file), bytes);
    this.state.content[platformMessageId] = { file, contentType };
    const message = this.append({
      kind: "image",
      senderId: user.id,
      senderName: user.name,
      senderRole: user.role,
      timestampMs: Date.now(),
      jobRef: null,
      platformMessageId,
      contentUrl: `/v1/message/${platformMessageId}/content`,
      label,
    });
    return message;
  }

  addUserText(user: SimUser, text: string): SimMessage {
    return this.append({
      kind: "text",
      senderId: user.id,
      senderName: user.name,
      senderRole: user.role,
      timestampMs: Date.now(),
      jobRef: JOB_REF.exec(text)?.[0] ?? null,
      text,
      platformMessageId: this.nextPlatformMessageId(),
    });
  }

  content(platformMessageId: string): { bytes: Buffer; contentType: string } | null {
    const record = this.state.content[platformMessageId];
    if (!record) return null;
    const file = path.join(this.contentDir, record.file);
    if (!fs.existsSync(file)) return null;
    return { bytes: fs.readFileSync(file), contentType: record.contentType };
  }

  attachDelivery(seq: number, delivery: DeliveryResult): void {
    const message = this.state.messages.find((m) => m.seq === seq);
    if (message) {
      message.delivery = delivery;
      this.save();
    }
  }

  // ---- reply tokens ----

  issueReplyToken(sourceMessageId: string): string {
    const token = `rt-${this.state.nonce}-${Object.keys(this.state.replyTokens).length + 1}`;
    this.state.replyTokens[token] = { sourceMessageId, used: false };
    this.save();
    return token;
  }

  /** Single use: a second reply on the same token is a protocol violation. */
  consumeReplyToken(token: string): string {
    const record = this.state.replyTokens[token];
    if (!record) throw new ReplyTokenError(`unknown reply token: ${token}`, 404);
    if (record.used) throw new ReplyTokenError(`reply token already used: ${token}`, 409);
    record.used = true;
    this.save();
    return record.sourceMessageId;
  }

  /**
   * Record a delivered bot reply. The only path that appends bot messages;
   * the reply always lands after the human message it answers.
   */
  appendBotMessages(
    sourceMessageId: string,
    messages: Array<
      | { type: "image"; originalContentUrl: string; previewImageUrl: string }
      | { type: "text"; text: string }
    >,
  ): SimMessage[] {
    const jobRef =
      messages
        .map((m) => (m.type === "text" ? (JOB_REF.exec(m.text)?.[0] ?? null) : null))
        .find((ref) => ref !== null) ?? null;
    return messages.map((payload) =>
      payload.type === "image"
        ? this.append({
            kind: "bot_image",
            senderId: "bot",
            senderName: "PaddyBot",
            senderRole: "bot",
            timestampMs: Date.now(),
            jobRef,
            originalContentUrl: payload.originalContentUrl,
            previewImageUrl: payload.previewImageUrl,
            replyToMessageId: sourceMessageId,
          })
        : this.append({
            kind: "bot_text",
            senderId: "bot",
            senderName: "PaddyBot",
            senderRole: "bot",
            timestampMs: Date.now(),
            jobRef,
            text: payload.text,
            replyToMessageId: sourceMessageId,
          }),
    );
  }

  private append(message: Omit<SimMessage, "seq">): SimMessage {
    const entry: SimMessage = { seq: ++this.state.seq, ...message };
    this.state.messages.push(entry);
    this.save();
    return entry;
  }

  private save(): void {
    const tmp = `${this.stateFile}.tmp`;
    fs.writeFileSync(tmp, JSON.stringify(this.state, null, 2));
    fs.renameSync(tmp, this.stateFile);
  }
}

/**
 * Correction controls appear only for specialists, and only on bot replies
 * that carry a job reference to verify.
 */
export function correctionControlsVisible(user: SimUser, message: SimMessage): boolean {
  return user.role === "specialist" && message.kind === "bot_text" && message.jobRef !== null;
}
