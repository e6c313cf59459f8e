#!/usr/bin/env node
/**
 * Protocol entry point. The solver side invokes the editor command with the
 * working directory appended as the final argument:
 *
 *   phase-edit-adapter [--mode mock|diffusion] [--model ID] [--device DEV] WORKDIR
 *
 * WORKDIR must contain input.npy and request.json; output.npy is written
 * back into it. Exit 0 on success, 1 on usage errors, 2 on runtime failure.
 */

import { parseArgs } from "node:util";

import { serveEdit } from "./adapter.js";
import type { AdapterConfig } from "./adapter.js";

const USAGE =
  "usage: phase-edit-adapter [--mode mock|diffusion] [--model ID] [--device DEV] WORKDIR";

function fail(message: string): never {
  console.error(message);
  console.error(USAGE);
  process.exit(1);
}

async function main(): Promise<void> {
  let parsed;
  try {
    parsed = parseArgs({
      args: process.argv.slice(2),
      options: {
        mode: { type: "string" },
        model: { type: "string" },
        device: { type: "string" },
        help: { type: "boolean", short: "h" },
      },
      allowPositionals: true,
    });
  } catch (err) {
    fail((err as Error).message);
  }

  if (parsed.values.help) {
    console.log(USAGE);
    return;
  }
  if (parsed.positionals.length !== 1) {
    fail(`expected exactly one working directory, got ${parsed.positionals.length}`);
  }
  const mode = parsed.values.mode ?? "mock";
  if (mode !== "mock" && mode !== "diffusion") {
    fail(`--mode must be 'mock' or 'diffusion', got '${mode}'`);
  }

  const config: AdapterConfig = {
    mode,
    model: parsed.values.model ?? "stable-diffusion-1.5",
    device: parsed.values.device ?? "cpu",
    workdir: parsed.positionals[0],
  };
  process.exitCode = await serveEdit(config);
}

main().catch((err) => {
  console.error(`error: ${err instanceof Error ? err.message : err}`);
  process.exitCode = 2;
});
