/**
 * lmk-bridge wire protocol: newline-delimited JSON over stdio.
 *
 * Handshake (first line from the bridge):
 *   {"protocol": "lmk-bridge", "version": 1}
 * Request:
 *   {"id": u64, "op": "forward"|"invert", "shape": [..], "data_b64": <f32le>}
 * Response:
 *   {"id", "ok": true, "shape", "data_b64"} | {"id", "ok": false, "error"}
 */

export const PROTOCOL_NAME = "lmk-bridge";
export const PROTOCOL_VERSION = 1;

export interface BridgeRequest {
  id: number;
  op: "forward" | "invert";
  shape: number[];
  data: Float32Array;
}

export interface Tensor {
  shape: number[];
  data: Float32Array;
}

export type ParseOutcome =
  | { ok: true; request: BridgeRequest }
  | { ok: false; id: number | null; error: string };

export function handshakeLine(): string {
  return JSON.stringify({ protocol: PROTOCOL_NAME, version: PROTOCOL_VERSION });
}

function elementCount(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

export function decodePayload(b64: string): Float32Array {
  const raw = Buffer.from(b64, "base64");
  return new Float32Array(raw.buffer.slice(raw.byteOffset, raw.byteOffset + raw.byteLength));
}

export function encodePayload(data: Float32Array): string {
  return Buffer.from(data.buffer, data.byteOffset, data.byteLength).toString("base64");
}

export function parseRequest(line: string): ParseOutcome {
  let obj: unknown;
  try {
    obj = JSON.parse(line);
  } catch (err) {
    return { ok: false, id: null, error: `request is not valid JSON: ${String(err)}` };
  }
  if (typeof obj !== "object" || obj === null || Array.isArray(obj)) {
    return { ok: false, id: null, error: "request must be a JSON object" };
  }
  const record = obj as Record<string, unknown>;
  const id =
    typeof record.id === "number" && Number.isInteger(record.id) && record.id >= 0
      ? record.id
      : null;
  if (id === null) {
    return { ok: false, id: null, error: "missing or invalid request id" };
  }
  const op = record.op;
  if (op !== "forward" && op !== "invert") {
    return { ok: false, id, error: `unknown op ${JSON.stringify(op)}` };
  }
  const shape = record.shape;
  if (
    !Array.isArray(shape) ||
    shape.length === 0 ||
    !shape.every((d) => typeof d === "number" && Number.isInteger(d) && d > 0)
  ) {
    return { ok: false, id, error: "shape must be a list of positive integers" };
  }
  if (typeof record.data_b64 !== "string") {
    return { ok: false, id, error: "missing data_b64 payload" };
  }
  let data: Float32Array;
  try {
    data = decodePayload(record.data_b64);
  } catch (err) {
    return { ok: false, id, error: `payload is not valid base64: ${String(err)}` };
  }
  if (data.length !== elementCount(shape as number[])) {
    return {
      ok: false,
      id,
      error: `payload holds ${data.length} floats but shape implies ${elementCount(shape as number[])}`,
    };
  }
  return { ok: true, request: { id, op, shape: shape as number[], data } };
}

export function okResponse(id: number, tensor: Tensor): string {
  return JSON.stringify({
    id,
    ok: true,
    shape: tensor.shape,
    data_b64: encodePayload(tensor.data),
  });
}

export function errorResponse(id: number | null, error: string): string {
  return JSON.stringify({ id, ok: false, error });
}
