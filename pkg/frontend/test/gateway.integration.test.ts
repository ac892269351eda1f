/**
 * End to end against a real gateway process: the simulator plays the
 * platform, the gateway runs unmodified from the installed backend package,
 * and the wire between them is plain HTTP on localhost.
 *
 * Covers the two contract claims: every envelope the simulator emits is
 * accepted by the gateway's schema and signature checks, and the three
 * canonical exchanges (silence, correction, confirmation) play out in the
 * timeline. The committed fixture envelopes are replayed afterwards to pin
 * acknowledgement and deduplication behavior.
 */

import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import type { Server } from "node:http";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { spawnGateway, type GatewayHandle } from "../src/gatewayproc";
import { createSimulator, type Simulator } from "../src/simulator";
import { runTrio, type TrioResult } from "../src/trio";
import { sign } from "../src/wire";

const SECRET = "integration-test-secret";
const STARTUP_MS = 60_000;
const TRIO_MS = 120_000;

let dir: string;
let server: Server;
let simulator: Simulator;
let gateway: GatewayHandle;

beforeAll(async () => {
  dir = fs.mkdtempSync(path.join(os.tmpdir(), "chatsim-integration-"));
  simulator = createSimulator({
    sessionDir: path.join(dir, "session"),
    gatewayUrl: "http://pending.invalid",
    channelSecret: SECRET,
  });
  server = simulator.app.listen(0, "127.0.0.1");
  await new Promise((resolve) => server.once("listening", resolve));
  const address = server.address() as { port: number };
  gateway = await spawnGateway({
    platformUrl: `http://127.0.0.1:${address.port}`,
    channelSecret: SECRET,
    specialists: ["U-specialist-1"],
    quiet: true,
  });
  simulator.setGatewayUrl(gateway.url);
}, STARTUP_MS);

afterAll(async () => {
  if (gateway) await gateway.stop();
  if (server) await new Promise((resolve) => server.close(resolve));
  if (dir) fs.rmSync(dir, { recursive: true, force: true });
  if (gateway) fs.rmSync(gateway.dataDir, { recursive: true, force: true });
});

describe("scripted session against a live gateway", () => {
  let result: TrioResult;

  it(
    "plays the silence, correction, and confirmation exchanges",
    async () => {
      result = await runTrio(simulator, gateway.url);
      const failed = result.checks.filter((c) => !c.pass);
      expect(
        failed,
        failed.map((c) => `${c.name}: ${c.detail}`).join("\n"),
      ).toEqual([]);
    },
    TRIO_MS,
  );

  it("accepted every envelope the simulator delivered", () => {
    const human = result.messages.filter((m) => m.kind === "image" || m.kind === "text");
    expect(human.length).toBeGreaterThanOrEqual(5);
    for (const message of human) {
      expect(message.delivery?.ok, JSON.stringify(message.delivery)).toBe(true);
      expect(message.delivery?.ack?.status).toBe("ok");
      expect(message.delivery?.ack?.duplicates).toBe(0);
    }
  });

  it("rendered bot replies only after the photos they answer", () => {
    const bySeq = new Map(result.messages.map((m) => [m.seq, m]));
    const bots = result.messages.filter((m) => m.kind.startsWith("bot_"));
    expect(bots.length).toBeGreaterThanOrEqual(4);
    for (const bot of bots) {
      const source = result.messages.find(
        (m) => m.platformMessageId === bot.replyToMessageId,
      );
      expect(source, `reply ${bot.seq} references a prior message`).toBeDefined();
      expect(source!.seq).toBeLessThan(bot.seq);
      expect(bySeq.get(source!.seq)!.senderRole).not.toBe("bot");
    }
  });

  it("serves the annotated image the bot linked", async () => {
    const botImage = result.messages.find((m) => m.kind === "bot_image")!;
    const response = await fetch(botImage.originalContentUrl!);
    expect(response.status).toBe(200);
    const bytes = Buffer.from(await response.arrayBuffer());
    // PNG magic: the link points at a real rendered image, not an error page.
    expect(bytes.subarray(0, 4)).toEqual(Buffer.from([0x89, 0x50, 0x4e, 0x47]));
    const preview = await fetch(botImage.previewImageUrl!);
    expect(preview.status).toBe(200);
  });
});

describe("committed fixture envelopes replayed against the live gateway", () => {
  interface FixtureCase {
    name: string;
    body: string;
    signature: string;
    ack: Record<string, unknown>;
    replayAck: Record<string, unknown>;
  }
  const fixture = JSON.parse(
    fs.readFileSync(path.join(__dirname, "..", "fixtures", "envelopes.json"), "utf8"),
  ) as { channelSecret: string; cases: FixtureCase[] };

  it(
    "acknowledges each fixture exactly as recorded, dedupe included",
    async () => {
      for (const testCase of fixture.cases) {
        const post = () =>
          fetch(`${gateway.url}/webhook`, {
            method: "POST",
            headers: {
              "content-type": "application/json",
              // Fixtures carry their own secret; re-sign for this gateway.
              "x-line-signature": sign(SECRET, testCase.body),
            },
            body: testCase.body,
          });
        const first = await post();
        expect(first.status, testCase.name).toBe(200);
        expect(await first.json(), testCase.name).toEqual(testCase.ack);
        const replay = await post();
        expect(await replay.json(), `${testCase.name} (replay)`).toEqual(
          testCase.replayAck,
        );
      }
    },
    TRIO_MS,
  );

  it("rejects the fixture signature under the wrong secret", async () => {
    const testCase = fixture.cases[0];
    const response = await fetch(`${gateway.url}/webhook`, {
      method: "POST",
      headers: {
        "content-type": "application/json",
        "x-line-signature": testCase.signature,
      },
      body: testCase.body,
    });
    expect(response.status).toBe(401);
  });
});
