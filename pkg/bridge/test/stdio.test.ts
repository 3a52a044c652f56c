import assert from "node:assert/strict";
import { spawn } from "node:child_process";
import { once } from "node:events";
import { createInterface } from "node:readline";
import { fileURLToPath } from "node:url";
import { dirname, join } from "node:path";
import { test } from "node:test";

import { encodePayload, decodePayload } from "../src/protocol.js";

const mainJs = join(dirname(fileURLToPath(import.meta.url)), "..", "src", "main.js");

test("spawned echo bridge round-trips over real stdio", async () => {
  const child = spawn(process.execPath, [mainJs, "--echo"], {
    stdio: ["pipe", "pipe", "inherit"],
  });
  const lines = createInterface({ input: child.stdout });
  const pending: string[] = [];
  const waiters: Array<(line: string) => void> = [];
  lines.on("line", (line) => {
    const waiter = waiters.shift();
    if (waiter) {
      waiter(line);
    } else {
      pending.push(line);
    }
  });
  const nextLine = () =>
    new Promise<string>((resolve) => {
      const buffered = pending.shift();
      if (buffered !== undefined) {
        resolve(buffered);
      } else {
        waiters.push(resolve);
      }
    });

  const handshake = JSON.parse(await nextLine());
  assert.equal(handshake.protocol, "lmk-bridge");
  assert.equal(handshake.version, 1);

  const payload = new Float32Array([3.5, -1.25, 8]);
  child.stdin.write(
    JSON.stringify({ id: 42, op: "invert", shape: [3], data_b64: encodePayload(payload) }) + "\n",
  );
  const response = JSON.parse(await nextLine());
  assert.equal(response.id, 42);
  assert.equal(response.ok, true);
  assert.deepEqual(Array.from(decodePayload(response.data_b64)), Array.from(payload));

  child.stdin.end();
  await once(child, "exit");
  assert.equal(child.exitCode, 0);
});

test("model-load failure prints an error JSON instead of the handshake", async () => {
  const child = spawn(process.execPath, [mainJs, "--model", "no/such-model"], {
    stdio: ["pipe", "pipe", "inherit"],
  });
  const lines = createInterface({ input: child.stdout });
  const [firstLine] = (await once(lines, "line")) as [string];
  const head = JSON.parse(firstLine);
  assert.ok(head.error, "expected an error field");
  assert.match(head.error, /diffusion runtime unavailable/);
  await once(child, "exit");
  assert.equal(child.exitCode, 1);
});

test("no mode flag prints a usage error", async () => {
  const child = spawn(process.execPath, [mainJs], { stdio: ["pipe", "pipe", "inherit"] });
  const lines = createInterface({ input: child.stdout });
  const [firstLine] = (await once(lines, "line")) as [string];
  assert.match(JSON.parse(firstLine).error, /--echo/);
  await once(child, "exit");
  assert.equal(child.exitCode, 1);
});

test("custom backend module loads through --backend", async () => {
  // fixtures stay in the source tree; tests run from dist/test
  const fixture = join(
    dirname(fileURLToPath(import.meta.url)), "..", "..", "test", "fixtures", "scale2.backend.js",
  );
  const child = spawn(process.execPath, [mainJs, "--backend", fixture], {
    stdio: ["pipe", "pipe", "inherit"],
  });
  const lines = createInterface({ input: child.stdout });
  const collected: string[] = [];
  const collectedWaiters: Array<(l: string) => void> = [];
  lines.on("line", (l) => {
    const w = collectedWaiters.shift();
    if (w) w(l);
    else collected.push(l);
  });
  const nextLine = () =>
    new Promise<string>((resolve) => {
      const buffered = collected.shift();
      if (buffered !== undefined) resolve(buffered);
      else collectedWaiters.push(resolve);
    });
  const handshake = JSON.parse(await nextLine());
  assert.equal(handshake.protocol, "lmk-bridge");
  child.stdin.write(
    JSON.stringify({
      id: 1,
      op: "forward",
      shape: [2],
      data_b64: encodePayload(new Float32Array([1, 2])),
    }) + "\n",
  );
  const response = JSON.parse(await nextLine());
  assert.deepEqual(Array.from(decodePayload(response.data_b64)), [2, 4]);
  child.stdin.end();
  await once(child, "exit");
});
