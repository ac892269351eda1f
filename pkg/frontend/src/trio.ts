/**
 * The three canonical chat exchanges, scripted against a live gateway:
 *
 * 1. A photo with no target disease: the bot stays silent.
 * 2. A photo the bot answers wrongly (to the specialist's eye): the
 *    specialist corrects it and the correction is recorded.
 * 3. A photo the bot answers correctly: the specialist confirms it.
 *
 * The driver talks to the simulator like the browser does (post image,
 * post text, read the timeline) and checks outcomes through the gateway's
 * public job and report endpoints.
 */

import type { Simulator } from "./simulator";
import type { SimMessage } from "./session";

export interface TrioCheck {
  name: string;
  pass: boolean;
  detail: string;
}

export interface TrioResult {
  checks: TrioCheck[];
  messages: SimMessage[];
  ok: boolean;
}

const FARMER = "U-farmer-1";
const SPECIALIST = "U-specialist-1";

async function waitFor<T>(
  probe: () => Promise<T | null>,
  what: string,
  timeoutMs = 20000,
): Promise<T> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    const got = await probe();
    if (got !== null) return got;
    await new Promise((r) => setTimeout(r, 100));
  }
  throw new Error(`timed out waiting for ${what}`);
}

async function jobView(gatewayUrl: string, ref: string): Promise<Record<string, any> | null> {
  const response = await fetch(`${gatewayUrl}/jobs/${ref}`);
  if (!response.ok) return null;
  return (await response.json()) as Record<string, any>;
}

async function settledJob(
  gatewayUrl: string,
  ref: string,
): Promise<Record<string, any>> {
  return waitFor(async () => {
    const view = await jobView(gatewayUrl, ref);
    if (!view) return null;
    return ["done", "skipped_no_reply", "failed"].includes(view.status) ? view : null;
  }, `job ${ref} to settle`);
}

export async function runTrio(simulator: Simulator, gatewayUrl: string): Promise<TrioResult> {
  const checks: TrioCheck[] = [];
  const session = simulator.session;
  const check = (name: string, pass: boolean, detail: string) => {
    checks.push({ name, pass, detail });
  };

  const botTextSince = (seq: number): SimMessage[] =>
    session.messagesSince(seq).filter((m) => m.kind === "bot_text");

  const postAndSettle = async (sample: string, ref: string) => {
    const before = session.seq;
    const result = (await simulator.postSample(sample)) as { delivery: { ok: boolean } };
    check(
      `${sample} envelope accepted`,
      result.delivery.ok,
      JSON.stringify(result.delivery),
    );
    const view = await settledJob(gatewayUrl, ref);
    return { before, view };
  };

  // -- scene 1: nothing to report, the bot says nothing --
  session.switchUser(FARMER);
  const blank = await postAndSettle("paddy-blank", "J1");
  check(
    "no-disease photo leaves the bot silent",
    blank.view.status === "skipped_no_reply" &&
      blank.view.reply_message_ids.length === 0 &&
      botTextSince(blank.before).length === 0,
    `status=${blank.view.status} replies=${blank.view.reply_message_ids.length}`,
  );

  // -- scene 2: wrong answer, specialist corrects --
  const wrong = await postAndSettle("paddy-blast", "J2");
  const wrongReply = await waitFor(async () => {
    const texts = botTextSince(wrong.before);
    return texts.length > 0 ? texts[0] : null;
  }, "bot reply to the second photo");
  check(
    "bot answers the second photo in the timeline",
    wrong.view.status === "done" &&
      (wrongReply.text ?? "").includes("Detected: blast") &&
      wrongReply.jobRef === "J2",
    `status=${wrong.view.status} text=${JSON.stringify(wrongReply.text)}`,
  );
  const botImages = session
    .messagesSince(wrong.before)
    .filter((m) => m.kind === "bot_image");
  check(
    "annotated image precedes the text in the reply",
    botImages.length === 1 && botImages[0].seq < wrongReply.seq,
    `images=${botImages.length}`,
  );

  session.switchUser(SPECIALIST);
  const beforeCorrection = session.seq;
  await simulator.postText("/correct J2 blight");
  const corrected = await waitFor(async () => {
    const texts = botTextSince(beforeCorrection);
    return texts.length > 0 ? texts[0] : null;
  }, "correction acknowledgement");
  const wrongAfter = await jobView(gatewayUrl, "J2");
  check(
    "specialist correction is recorded",
    corrected.text === "Recorded: J2 corrected to blight." &&
      (wrongAfter?.verdicts ?? []).some(
        (v: any) => v.verdict === "wrong_class" && v.corrected_class === "blight",
      ),
    `ack=${JSON.stringify(corrected.text)} verdicts=${JSON.stringify(wrongAfter?.verdicts)}`,
  );

  // -- scene 3: right answer, specialist confirms --
  session.switchUser(FARMER);
  const right = await postAndSettle("paddy-blight", "J3");
  const rightReply = await waitFor(async () => {
    const texts = botTextSince(right.before);
    return texts.length > 0 ? texts[0] : null;
  }, "bot reply to the third photo");
  check(
    "bot names the disease on the third photo",
    right.view.status === "done" && (rightReply.text ?? "").includes("Detected: blight"),
    `status=${right.view.status} text=${JSON.stringify(rightReply.text)}`,
  );

  session.switchUser(SPECIALIST);
  const beforeConfirm = session.seq;
  await simulator.postText("/confirm J3");
  const confirmed = await waitFor(async () => {
    const texts = botTextSince(beforeConfirm);
    return texts.length > 0 ? texts[0] : null;
  }, "confirmation acknowledgement");
  const rightAfter = await jobView(gatewayUrl, "J3");
  check(
    "specialist confirmation is recorded",
    confirmed.text === "Recorded: J3 confirmed." &&
      (rightAfter?.verdicts ?? []).some((v: any) => v.verdict === "confirm"),
    `ack=${JSON.stringify(confirmed.text)} verdicts=${JSON.stringify(rightAfter?.verdicts)}`,
  );

  // -- the verdicts feed the deployment report --
  const report = (await (await fetch(`${gatewayUrl}/reports/deployment-atp`)).json()) as {
    sample_count: number;
    total: { points: number; images: number };
  };
  check(
    "deployment report scores one hit out of two verified answers",
    report.sample_count === 2 && report.total.points === 1.0 && report.total.images === 2,
    JSON.stringify(report.total),
  );

  const ok = checks.every((c) => c.pass);
  return { checks, messages: session.allMessages(), ok };
}
