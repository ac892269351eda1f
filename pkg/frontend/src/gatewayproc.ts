/**
 * Spawn a real gateway process for the scripted scenario and the
 * integration tests. The gateway is configured to call back into the
 * simulator for message content and replies, so both halves of the wire
 * contract run unmodified.
 */

import { spawn, type ChildProcess } from "node:child_process";
import * as fs from "node:fs";
import * as net from "node:net";
import * as os from "node:os";
import * as path from "node:path";

export interface GatewayHandle {
  url: string;
  dataDir: string;
  stop: () => Promise<void>;
}

export async function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const server = net.createServer();
    server.listen(0, "127.0.0.1", () => {
      const address = server.address();
      if (address && typeof address === "object") {
        const port = address.port;
        server.close(() => resolve(port));
      } else {
        server.close(() => reject(new Error("no port assigned")));
      }
    });
    server.on("error", reject);
  });
}

async function waitForHealth(url: string, proc: ChildProcess, timeoutMs = 30000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  let exited = false;
  proc.once("exit", () => {
    exited = true;
  });
  while (Date.now() < deadline) {
    if (exited) throw new Error("gateway process exited before becoming healthy");
    try {
      const response = await fetch(`${url}/healthz`);
      if (response.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 150));
  }
  throw new Error(`gateway at ${url} not healthy within ${timeoutMs}ms`);
}

export async function spawnGateway(options: {
  platformUrl: string;
  channelSecret: string;
  specialists: string[];
  python?: string;
  quiet?: boolean;
}): Promise<GatewayHandle> {
  const python = options.python ?? process.env.CHATSIM_PYTHON ?? "python3";
  const port = await freePort();
  const url = `http://127.0.0.1:${port}`;
  const dataDir = fs.mkdtempSync(path.join(os.tmpdir(), "chatsim-gw-"));
  const configPath = path.join(dataDir, "gateway.json");
  fs.writeFileSync(
    configPath,
    JSON.stringify(
      {
        channel_secret: options.channelSecret,
        platform_base_url: options.platformUrl,
        public_base_url: url,
        data_dir: path.join(dataDir, "data"),
        backend_kind: "mock_synthetic",
        specialists: options.specialists,
        workers: 2,
      },
      null,
      2,
    ),
  );

  const proc = spawn(
    python,
    ["-m", "paddybot.cli", "serve", "--config", configPath, "--host", "127.0.0.1", "--port", String(port)],
    { stdio: options.quiet ? "ignore" : ["ignore", "inherit", "inherit"] },
  );
  const spawnError = new Promise<never>((_, reject) => {
    proc.once("error", (err) => reject(new Error(`failed to start gateway: ${err.message}`)));
  });
  await Promise.race([waitForHealth(url, proc), spawnError]);

  return {
    url,
    dataDir,
    stop: () =>
      new Promise<void>((resolve) => {
        if (proc.exitCode !== null) {
          resolve();
          return;
        }
        proc.once("exit", () => resolve());
        proc.kill("SIGTERM");
        setTimeout(() => {
          if (proc.exitCode === null) proc.kill("SIGKILL");
        }, 5000).unref();
      }),
  };
}
