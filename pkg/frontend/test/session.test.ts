/** Session state: personas, timeline ordering, tokens, persistence. */

import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import { afterEach, beforeEach, describe, expect, it } from "vitest";
import {
  correctionControlsVisible,
  ReplyTokenError,
  SessionStore,
  type SimMessage,
  type SimUser,
} from "../src/session";

let dir: string;

beforeEach(() => {
  dir = fs.mkdtempSync(path.join(os.tmpdir(), "chatsim-session-test-"));
});

afterEach(() => {
  fs.rmSync(dir, { recursive: true, force: true });
});

describe("fresh session", () => {
  it("starts with the default personas and an empty timeline", () => {
    const session = new SessionStore(dir);
    const users = session.users();
    expect(users.map((u) => u.role).sort()).toEqual(["farmer", "farmer", "specialist"]);
    expect(session.activeUser().role).toBe("farmer");
    expect(session.allMessages()).toEqual([]);
    expect(session.seq).toBe(0);
  });

  it("switches personas and rejects unknown ids", () => {
    const session = new SessionStore(dir);
    const specialist = session.users().find((u) => u.role === "specialist")!;
    expect(session.switchUser(specialist.id).name).toBe(specialist.name);
    expect(session.activeUser().id).toBe(specialist.id);
    expect(() => session.switchUser("U-nobody")).toThrow(/no such user/);
  });
});

describe("timeline", () => {
  it("stores image bytes retrievable by platform message id", () => {
    const session = new SessionStore(dir);
    const bytes = Buffer.from([0x89, 0x50, 0x4e, 0x47, 1, 2, 3]);
    const message = session.addUserImage(session.activeUser(), bytes, "image/png", "leaf.png");
    expect(message.kind).toBe("image");
    expect(message.platformMessageId).toBeTruthy();
    const stored = session.content(message.platformMessageId!)!;
    expect(stored.contentType).toBe("image/png");
    expect(Buffer.compare(stored.bytes, bytes)).toBe(0);
    expect(session.content("sim-unknown")).toBeNull();
  });

  it("extracts job references from command text", () => {
    const session = new SessionStore(dir);
    const command = session.addUserText(session.activeUser(), "/confirm J7");
    expect(command.jobRef).toBe("J7");
    const chatter = session.addUserText(session.activeUser(), "how is the field?");
    expect(chatter.jobRef).toBeNull();
  });

  it("assigns strictly increasing sequence numbers", () => {
    const session = new SessionStore(dir);
    const user = session.activeUser();
    const seqs = [
      session.addUserText(user, "one"),
      session.addUserText(user, "two"),
      session.addUserImage(user, Buffer.from("x"), "image/png", "x.png"),
    ].map((m) => m.seq);
    expect(seqs).toEqual([1, 2, 3]);
    expect(session.messagesSince(2).map((m) => m.seq)).toEqual([3]);
  });
});

describe("reply tokens", () => {
  it("are single use", () => {
    const session = new SessionStore(dir);
    const image = session.addUserImage(session.activeUser(), Buffer.from("x"), "image/png", "x");
    const token = session.issueReplyToken(image.platformMessageId!);
    expect(session.consumeReplyToken(token)).toBe(image.platformMessageId);
    try {
      session.consumeReplyToken(token);
      expect.unreachable("second consume must throw");
    } catch (err) {
      expect(err).toBeInstanceOf(ReplyTokenError);
      expect((err as ReplyTokenError).status).toBe(409);
    }
  });

  it("rejects tokens never issued", () => {
    const session = new SessionStore(dir);
    try {
      session.consumeReplyToken("rt-forged");
      expect.unreachable("unknown token must throw");
    } catch (err) {
      expect((err as ReplyTokenError).status).toBe(404);
    }
  });
});

describe("bot replies", () => {
  it("append in delivery order, linked to the answered message and its job ref", () => {
    const session = new SessionStore(dir);
    const image = session.addUserImage(session.activeUser(), Buffer.from("x"), "image/png", "x");
    const appended = session.appendBotMessages(image.platformMessageId!, [
      {
        type: "image",
        originalContentUrl: "http://bot/content/abc",
        previewImageUrl: "http://bot/content/abc/preview",
      },
      { type: "text", text: "Detected: blast (0.81)\nJob J4. Reply /confirm J4 ..." },
    ]);
    expect(appended.map((m) => m.kind)).toEqual(["bot_image", "bot_text"]);
    expect(appended[0].seq).toBeLessThan(appended[1].seq);
    for (const message of appended) {
      expect(message.jobRef).toBe("J4");
      expect(message.replyToMessageId).toBe(image.platformMessageId);
      expect(message.senderRole).toBe("bot");
    }
  });
});

describe("persistence", () => {
  it("restores the whole session from disk", () => {
    const first = new SessionStore(dir);
    const specialist = first.users().find((u) => u.role === "specialist")!;
    first.switchUser(specialist.id);
    const image = first.addUserImage(specialist, Buffer.from("leafy"), "image/png", "a.png");
    const token = first.issueReplyToken(image.platformMessageId!);
    first.consumeReplyToken(token);
    first.appendBotMessages(image.platformMessageId!, [{ type: "text", text: "Job J1." }]);

    const reopened = new SessionStore(dir);
    expect(reopened.activeUser().id).toBe(specialist.id);
    expect(reopened.allMessages().map((m) => m.kind)).toEqual(["image", "bot_text"]);
    expect(reopened.seq).toBe(first.seq);
    expect(Buffer.compare(reopened.content(image.platformMessageId!)!.bytes, Buffer.from("leafy"))).toBe(0);
    // A consumed token stays consumed across the reload.
    expect(() => reopened.consumeReplyToken(token)).toThrow(/already used/);
  });

  it("keeps platform message ids unique across a restart", () => {
    const first = new SessionStore(dir);
    const before = first.addUserText(first.activeUser(), "one").platformMessageId;
    const reopened = new SessionStore(dir);
    const after = reopened.addUserText(reopened.activeUser(), "two").platformMessageId;
    expect(after).not.toBe(before);
  });
});

describe("correction controls", () => {
  const farmer: SimUser = { id: "U-f", name: "F", role: "farmer" };
  const specialist: SimUser = { id: "U-s", name: "S", role: "specialist" };
  const botAnswer = {
    seq: 1,
    kind: "bot_text",
    senderId: "bot",
    senderName: "PaddyBot",
    senderRole: "bot",
    timestampMs: 0,
    jobRef: "J1",
    text: "Detected: blast (0.81)",
  } as SimMessage;

  it("show only for specialists on bot answers that carry a job ref", () => {
    expect(correctionControlsVisible(specialist, botAnswer)).toBe(true);
    expect(correctionControlsVisible(farmer, botAnswer)).toBe(false);
    expect(
      correctionControlsVisible(specialist, { ...botAnswer, jobRef: null }),
    ).toBe(false);
    expect(
      correctionControlsVisible(specialist, { ...botAnswer, kind: "text" }),
    ).toBe(false);
  });
});
