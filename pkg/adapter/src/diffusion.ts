/**
 * Diffusion tier: text-guided editing through a locally installed pipeline.
 *
 * This mode needs model weights and an inference backend, neither of which
 * is part of the package; it is an optional, manually provisioned tier. The
 * phase image is replicated to three channels for the pipeline and averaged
 * back afterwards. Every load failure maps to ModelLoadError so the CLI can
 * exit with a clean diagnostic instead of a stack trace.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import type { FloatImage } from "./npy.js";
import type { EditRequest } from "./request.js";

export class ModelLoadError extends Error {}

export interface DiffusionOptions {
  model: string; // model directory, or a name under ADAPTER_MODEL_DIR
  device: string;
}

interface DiffusionBackend {
  editImage(
    rgb: Float32Array,
    height: number,
    width: number,
    request: EditRequest,
    device: string,
  ): Promise<Float32Array>;
}

function resolveModelDir(model: string): string {
  const candidates = [model];
  const root = process.env.ADAPTER_MODEL_DIR;
  if (root) candidates.push(path.join(root, model));
  for (const candidate of candidates) {
    if (fs.existsSync(candidate) && fs.statSync(candidate).isDirectory()) {
      return candidate;
    }
  }
  throw new ModelLoadError(
    `model assets for '${model}' not found (looked at: ${candidates.join(", ")}); ` +
      "diffusion mode needs a local pipeline directory, via --model or " +
      "ADAPTER_MODEL_DIR; mock mode runs without weights",
  );
}

async function loadBackend(modelDir: string): Promise<DiffusionBackend> {
  const entry = path.join(modelDir, "backend.mjs");
  if (!fs.existsSync(entry)) {
    throw new ModelLoadError(
      `no inference backend at ${entry}; expected a module exporting editImage()`,
    );
  }
  let mod: { editImage?: DiffusionBackend["editImage"] };
  try {
    mod = await import(entry);
  } catch (err) {
    throw new ModelLoadError(
      `inference backend failed to load: ${(err as Error).message}`,
    );
  }
  if (typeof mod.editImage !== "function") {
    throw new ModelLoadError(`backend at ${entry} does not export editImage()`);
  }
  return { editImage: mod.editImage };
}

export async function diffusionEdit(
  image: FloatImage,
  request: EditRequest,
  options: DiffusionOptions,
): Promise<FloatImage> {
  const modelDir = resolveModelDir(options.model);
  const backend = await loadBackend(modelDir);

  const { data, height, width } = image;
  const rgb = new Float32Array(3 * data.length);
  for (let i = 0; i < data.length; i++) {
    rgb[3 * i] = rgb[3 * i + 1] = rgb[3 * i + 2] = data[i];
  }
  const edited = await backend.editImage(rgb, height, width, request, options.device);
  if (edited.length !== rgb.length) {
    throw new ModelLoadError(
      `backend returned ${edited.length} values, expected ${rgb.length}`,
    );
  }
  const out = new Float64Array(data.length);
  for (let i = 0; i < data.length; i++) {
    out[i] = (edited[3 * i] + edited[3 * i + 1] + edited[3 * i + 2]) / 3;
  }
  return { data: out, height, width };
}
