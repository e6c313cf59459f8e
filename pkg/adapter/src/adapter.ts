/**
 * One protocol transaction: read input.npy and request.json from a working
 * directory, run the configured editor, write output.npy.
 *
 * Exit codes mirror the solver side's expectations: 0 on success, 1 for
 * usage/config errors (handled by the CLI), 2 for runtime failures such as
 * missing protocol files or absent model assets. The input files are never
 * modified; the output is written atomically next to them.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { ModelLoadError, diffusionEdit } from "./diffusion.js";
import { mockEdit } from "./mock.js";
import { NpyError, npyReadImage, npyWriteFloat32 } from "./npy.js";
import type { FloatImage } from "./npy.js";
import { RequestError, parseRequest } from "./request.js";

export interface AdapterConfig {
  mode: "mock" | "diffusion";
  model: string;
  device: string;
  workdir: string;
}

export interface Logger {
  warn(message: string): void;
  error(message: string): void;
}

const consoleLogger: Logger = {
  warn: (message) => console.error(`warning: ${message}`),
  error: (message) => console.error(`error: ${message}`),
};

function clampToUnit(image: FloatImage): FloatImage {
  const data = new Float64Array(image.data.length);
  for (let i = 0; i < data.length; i++) {
    data[i] = Math.min(1, Math.max(0, image.data[i]));
  }
  return { data, height: image.height, width: image.width };
}

/** Serve a single edit request; returns the process exit code. */
export async function serveEdit(
  config: AdapterConfig,
  log: Logger = consoleLogger,
): Promise<number> {
  const inputPath = path.join(config.workdir, "input.npy");
  const requestPath = path.join(config.workdir, "request.json");
  for (const required of [inputPath, requestPath]) {
    if (!fs.existsSync(required)) {
      log.error(`missing protocol file: ${required}`);
      return 2;
    }
  }

  let image: FloatImage;
  let requestText: string;
  try {
    image = npyReadImage(inputPath);
    requestText = fs.readFileSync(requestPath, "utf8");
  } catch (err) {
    if (err instanceof NpyError) {
      log.error(`cannot read input.npy: ${err.message}`);
      return 2;
    }
    throw err;
  }

  try {
    const request = parseRequest(requestText, (msg) => log.warn(msg));
    if (
      (request.height !== undefined && request.height !== image.height) ||
      (request.width !== undefined && request.width !== image.width)
    ) {
      log.error(
        `request shape (${request.height}, ${request.width}) does not match ` +
          `input.npy shape (${image.height}, ${image.width})`,
      );
      return 2;
    }

    const edited =
      config.mode === "mock"
        ? mockEdit(image)
        : await diffusionEdit(image, request, {
            model: config.model,
            device: config.device,
          });

    const output = clampToUnit(edited);
    npyWriteFloat32(path.join(config.workdir, "output.npy"), output);
    return 0;
  } catch (err) {
    if (err instanceof RequestError || err instanceof ModelLoadError || err instanceof NpyError) {
      log.error(err.message);
      return 2;
    }
    throw err;
  }
}
