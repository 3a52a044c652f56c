#!/usr/bin/env node
/**
 * Bridge entry point.
 *
 *   lmk-bridge --echo                         identity test double
 *   lmk-bridge --model <id> [--device cpu]    diffusion backend
 *              [--steps 50] [--guidance 1.0]
 *   lmk-bridge --backend ./module.js          custom backend factory
 *
 * A model-load failure prints an error JSON instead of the handshake and
 * exits nonzero, so clients fail fast instead of hanging.
 */

import process from "node:process";

import { EchoBackend, loadCustomBackend, loadDiffusionBackend } from "./backend.js";
import type { Backend, DiffusionOptions } from "./backend.js";
import { serve } from "./server.js";

interface CliArgs {
  echo: boolean;
  model: string | null;
  backend: string | null;
  device: string;
  steps: number;
  guidance: number;
}

function parseArgs(argv: string[]): CliArgs {
  const args: CliArgs = {
    echo: false,
    model: null,
    backend: null,
    device: "cpu",
    steps: 50,
    guidance: 1.0,
  };
  for (let i = 0; i < argv.length; i += 1) {
    const flag = argv[i];
    const next = () => {
      i += 1;
      if (i >= argv.length) {
        throw new Error(`flag ${flag} needs a value`);
      }
      return argv[i];
    };
    switch (flag) {
      case "--echo":
        args.echo = true;
        break;
      case "--model":
        args.model = next();
        break;
      case "--backend":
        args.backend = next();
        break;
      case "--device":
        args.device = next();
        break;
      case "--steps":
        args.steps = Number(next());
        break;
      case "--guidance":
        args.guidance = Number(next());
        break;
      default:
        throw new Error(`unknown flag ${flag}`);
    }
  }
  return args;
}

async function buildBackend(args: CliArgs): Promise<Backend> {
  const options: DiffusionOptions = {
    modelId: args.model ?? "",
    device: args.device,
    steps: args.steps,
    guidance: args.guidance,
  };
  if (args.echo) {
    return new EchoBackend();
  }
  if (args.backend) {
    return loadCustomBackend(args.backend, options);
  }
  if (args.model) {
    return loadDiffusionBackend(options);
  }
  throw new Error("choose a mode: --echo, --model <id> or --backend <module>");
}

async function main(): Promise<void> {
  let args: CliArgs;
  let backend: Backend;
  try {
    args = parseArgs(process.argv.slice(2));
    backend = await buildBackend(args);
  } catch (err) {
    process.stdout.write(JSON.stringify({ error: String(err) }) + "\n");
    process.exitCode = 1;
    return;
  }
  await serve(backend, process.stdin, process.stdout);
}

void main();
