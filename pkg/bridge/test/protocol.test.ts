import assert from "node:assert/strict";
import { test } from "node:test";

import {
  decodePayload,
  encodePayload,
  errorResponse,
  handshakeLine,
  okResponse,
  parseRequest,
} from "../src/protocol.js";

function validRequest(overrides: Record<string, unknown> = {}): string {
  const data = new Float32Array([1.5, -2.25, 0, 4]);
  return JSON.stringify({
    id: 7,
    op: "forward",
    shape: [2, 2],
    data_b64: encodePayload(data),
    ...overrides,
  });
}

test("handshake line matches the protocol contract", () => {
  assert.deepEqual(JSON.parse(handshakeLine()), { protocol: "lmk-bridge", version: 1 });
});

test("payload round trip preserves f32 bits", () => {
  const data = new Float32Array([0.1, -1e7, 3.25, Number.EPSILON]);
  const back = decodePayload(encodePayload(data));
  assert.deepEqual(Array.from(back), Array.from(data));
});

test("valid request parses", () => {
  const outcome = parseRequest(validRequest());
  assert.ok(outcome.ok);
  if (outcome.ok) {
    assert.equal(outcome.request.id, 7);
    assert.equal(outcome.request.op, "forward");
    assert.deepEqual(outcome.request.shape, [2, 2]);
    assert.equal(outcome.request.data.length, 4);
  }
});

test("non-JSON line is rejected with null id", () => {
  const outcome = parseRequest("this is not json");
  assert.ok(!outcome.ok);
  if (!outcome.ok) {
    assert.equal(outcome.id, null);
  }
});

test("unknown op is rejected but keeps the id", () => {
  const outcome = parseRequest(validRequest({ op: "transmogrify" }));
  assert.ok(!outcome.ok);
  if (!outcome.ok) {
    assert.equal(outcome.id, 7);
    assert.match(outcome.error, /transmogrify/);
  }
});

test("payload size must match the shape", () => {
  const outcome = parseRequest(validRequest({ shape: [3, 3] }));
  assert.ok(!outcome.ok);
  if (!outcome.ok) {
    assert.match(outcome.error, /shape implies 9/);
  }
});

test("bad shapes are rejected", () => {
  for (const shape of [[], [0], [-1, 4], ["x"], "nope"]) {
    const outcome = parseRequest(validRequest({ shape }));
    assert.ok(!outcome.ok, JSON.stringify(shape));
  }
});

test("missing id is rejected", () => {
  const outcome = parseRequest(validRequest({ id: undefined }));
  assert.ok(!outcome.ok);
});

test("response encoders produce parseable frames", () => {
  const ok = JSON.parse(okResponse(3, { shape: [1], data: new Float32Array([9]) }));
  assert.equal(ok.ok, true);
  assert.equal(ok.id, 3);
  const err = JSON.parse(errorResponse(null, "boom"));
  assert.equal(err.ok, false);
  assert.equal(err.error, "boom");
});
