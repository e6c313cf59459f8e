/**
 * request.json parsing: known keys validated, unknown keys warned about.
 *
 * The solver side writes prompt/guidance/steps/seed plus the image shape;
 * future protocol versions may add keys, so anything unrecognized is
 * ignored with a logged warning instead of failing the edit.
 */

export class RequestError extends Error {}

export interface EditRequest {
  prompt: string;
  guidanceScale: number;
  inferenceSteps: number;
  seed: number;
  height?: number;
  width?: number;
  mode: string;
}

const KNOWN_KEYS = new Set([
  "prompt",
  "guidance_scale",
  "inference_steps",
  "seed",
  "height",
  "width",
  "mode",
]);

function numberField(
  doc: Record<string, unknown>,
  key: string,
  fallback: number,
  integer: boolean,
): number {
  const value = doc[key];
  if (value === undefined) return fallback;
  if (typeof value !== "number" || !Number.isFinite(value)) {
    throw new RequestError(`request key '${key}' must be a finite number`);
  }
  if (integer && !Number.isInteger(value)) {
    throw new RequestError(`request key '${key}' must be an integer`);
  }
  return value;
}

export function parseRequest(
  text: string,
  warn: (message: string) => void,
): EditRequest {
  let doc: unknown;
  try {
    doc = JSON.parse(text);
  } catch (err) {
    throw new RequestError(`request.json is not valid JSON: ${(err as Error).message}`);
  }
  if (typeof doc !== "object" || doc === null || Array.isArray(doc)) {
    throw new RequestError("request.json must hold a JSON object");
  }
  const record = doc as Record<string, unknown>;
  for (const key of Object.keys(record)) {
    if (!KNOWN_KEYS.has(key)) {
      warn(`ignoring unknown request key '${key}'`);
    }
  }
  const prompt = record.prompt === undefined ? "" : record.prompt;
  if (typeof prompt !== "string") {
    throw new RequestError("request key 'prompt' must be a string");
  }
  const mode = record.mode === undefined ? "remove" : record.mode;
  if (typeof mode !== "string") {
    throw new RequestError("request key 'mode' must be a string");
  }
  const guidanceScale = numberField(record, "guidance_scale", 5.0, false);
  const inferenceSteps = numberField(record, "inference_steps", 100, true);
  if (guidanceScale <= 0) {
    throw new RequestError("request key 'guidance_scale' must be > 0");
  }
  if (inferenceSteps < 1) {
    throw new RequestError("request key 'inference_steps' must be >= 1");
  }
  const request: EditRequest = {
    prompt,
    guidanceScale,
    inferenceSteps,
    seed: numberField(record, "seed", 0, true),
    mode,
  };
  if (record.height !== undefined) {
    request.height = numberField(record, "height", 0, true);
  }
  if (record.width !== undefined) {
    request.width = numberField(record, "width", 0, true);
  }
  return request;
}
