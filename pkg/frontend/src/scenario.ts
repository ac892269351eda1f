/**
 * Scripted session: spin up a fresh gateway, run the three canonical
 * exchanges through the simulator, print the conversation as a transcript,
 * and exit nonzero if any expectation failed.
 *
 * With --gateway the script attaches to an already-running gateway instead
 * (its channel secret must be passed as --secret, and its job references
 * are only predictable on a fresh database).
 */

import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import { parseArgs } from "node:util";
import { spawnGateway, type GatewayHandle } from "./gatewayproc";
import { createSimulator } from "./simulator";
import type { SimMessage } from "./session";
import { runTrio } from "./trio";

const SECRET_DEFAULT = "chatsim-scenario-secret";

function stamp(ms: number): string {
  return new Date(ms).toISOString().slice(11, 19);
}

function renderLine(message: SimMessage): string {
  const who = `${message.senderName} (${message.senderRole})`;
  switch (message.kind) {
    case "image":
      return `[${stamp(message.timestampMs)}] ${who}: [photo ${message.label}]`;
    case "text":
      return `[${stamp(message.timestampMs)}] ${who}: ${message.text}`;
    case "bot_image":
      return `[${stamp(message.timestampMs)}] ${who}: [annotated image ${message.originalContentUrl}]`;
    case "bot_text":
      return `[${stamp(message.timestampMs)}] ${who}: ${message.text}`;
  }
}

async function main(): Promise<number> {
  const { values } = parseArgs({
    options: {
      gateway: { type: "string" },
      secret: { type: "string", default: process.env.CHATSIM_SECRET ?? SECRET_DEFAULT },
      python: { type: "string", default: process.env.CHATSIM_PYTHON ?? "python3" },
      "keep-session": { type: "boolean", default: false },
    },
  });

  const sessionDir = fs.mkdtempSync(path.join(os.tmpdir(), "chatsim-scenario-"));
  const simulator = createSimulator({
    sessionDir,
    gatewayUrl: values.gateway ?? "http://pending.invalid",
    channelSecret: values.secret!,
  });

  const server = simulator.app.listen(0, "127.0.0.1");
  await new Promise((resolve) => server.once("listening", resolve));
  const address = server.address();
  const simUrl =
    address && typeof address === "object"
      ? `http://127.0.0.1:${address.port}`
      : "http://127.0.0.1:0";

  let gateway: GatewayHandle | null = null;
  let gatewayUrl = values.gateway ?? "";
  if (!gatewayUrl) {
    console.log("starting a fresh gateway against the simulator...");
    gateway = await spawnGateway({
      platformUrl: simUrl,
      channelSecret: values.secret!,
      specialists: ["U-specialist-1"],
      python: values.python,
      quiet: true,
    });
    gatewayUrl = gateway.url;
  }
  simulator.setGatewayUrl(gatewayUrl);

  console.log(`simulator: ${simUrl}`);
  console.log(`gateway:   ${gatewayUrl}`);
  console.log();

  try {
    const result = await runTrio(simulator, gatewayUrl);
    console.log("--- group timeline ---");
    for (const message of result.messages) {
      console.log(renderLine(message));
    }
    console.log();
    for (const check of result.checks) {
      console.log(`${check.pass ? "PASS" : "FAIL"}: ${check.name} (${check.detail})`);
    }
    if (values["keep-session"]) {
      console.log(`\nsession kept at ${sessionDir}`);
    }
    return result.ok ? 0 : 1;
  } finally {
    server.close();
    if (gateway) await gateway.stop();
    if (!values["keep-session"]) fs.rmSync(sessionDir, { recursive: true, force: true });
  }
}

main().then(
  (code) => process.exit(code),
  (err) => {
    console.error(err);
    process.exit(1);
  },
);
