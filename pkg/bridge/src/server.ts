/**
 * Serve loop: handshake, then answer requests strictly one at a time.
 *
 * Lines are queued as they arrive but dispatched sequentially, so a slow
 * backend never sees interleaved work and every request id is answered
 * exactly once, in arrival order.
 */

import { createInterface } from "node:readline";
import type { Readable, Writable } from "node:stream";

import type { Backend } from "./backend.js";
import { errorResponse, handshakeLine, okResponse, parseRequest } from "./protocol.js";

export async function serve(backend: Backend, input: Readable, output: Writable): Promise<void> {
  output.write(handshakeLine() + "\n");
  const lines = createInterface({ input, crlfDelay: Infinity });
  let inFlight: Promise<void> = Promise.resolve();

  const handle = async (line: string): Promise<void> => {
    const trimmed = line.trim();
    if (!trimmed) {
      return;
    }
    const outcome = parseRequest(trimmed);
    if (!outcome.ok) {
      output.write(errorResponse(outcome.id, outcome.error) + "\n");
      return;
    }
    const { id, op, shape, data } = outcome.request;
    try {
      const result = await backend[op]({ shape, data });
      output.write(okResponse(id, result) + "\n");
    } catch (err) {
      output.write(errorResponse(id, `${op} failed: ${String(err)}`) + "\n");
    }
  };

  await new Promise<void>((resolve) => {
    lines.on("line", (line) => {
      inFlight = inFlight.then(() => handle(line));
    });
    lines.on("close", () => {
      void inFlight.then(resolve);
    });
  });
}
