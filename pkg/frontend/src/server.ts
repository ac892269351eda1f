/** CLI entry: run the group chat simulator against a gateway. */

import { parseArgs } from "node:util";
import { createSimulator } from "./simulator";

const { values } = parseArgs({
  options: {
    port: { type: "string", default: "8787" },
    gateway: { type: "string", default: process.env.CHATSIM_GATEWAY ?? "http://127.0.0.1:8000" },
    secret: { type: "string", default: process.env.CHATSIM_SECRET ?? "" },
    session: { type: "string", default: "./chatsim-session" },
    destination: { type: "string", default: "sim-bot" },
  },
});

if (!values.secret) {
  console.error(
    "chatsim: --secret (or CHATSIM_SECRET) must match the gateway's channel_secret",
  );
  process.exit(2);
}

const simulator = createSimulator({
  sessionDir: values.session!,
  gatewayUrl: values.gateway!,
  channelSecret: values.secret,
  destination: values.destination,
});

const port = Number(values.port);
simulator.app.listen(port, "127.0.0.1", () => {
  console.log(`chatsim listening on http://127.0.0.1:${port}`);
  console.log(`delivering webhooks to ${values.gateway}`);
  console.log(`session state in ${values.session}`);
});
