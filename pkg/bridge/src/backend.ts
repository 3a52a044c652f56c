/**
 * Generation backends: a forward (latent -> media pixels) and invert
 * (media -> latent estimate) pair.
 *
 * The echo backend returns payloads unchanged, which makes the bridge behave
 * exactly like the identity channel; it is the test double the Python side
 * uses in CI.  Real diffusion backends load lazily so the bridge binary works
 * without any ML runtime installed.
 */

import type { Tensor } from "./protocol.js";

export interface Backend {
  forward(input: Tensor): Promise<Tensor>;
  invert(input: Tensor): Promise<Tensor>;
}

export interface DiffusionOptions {
  modelId: string;
  device: string;
  steps: number;
  guidance: number;
}

export class EchoBackend implements Backend {
  async forward(input: Tensor): Promise<Tensor> {
    return input;
  }

  async invert(input: Tensor): Promise<Tensor> {
    return input;
  }
}

/** Load a user-supplied backend module: default export = factory(options). */
export async function loadCustomBackend(
  modulePath: string,
  options: DiffusionOptions,
): Promise<Backend> {
  const mod = await import(modulePath);
  const factory = mod.default ?? mod.createBackend;
  if (typeof factory !== "function") {
    throw new Error(`backend module ${modulePath} exports no factory function`);
  }
  const backend = await factory(options);
  if (typeof backend?.forward !== "function" || typeof backend?.invert !== "function") {
    throw new Error(`backend module ${modulePath} did not produce forward/invert methods`);
  }
  return backend as Backend;
}

/**
 * Stable-Diffusion-style backend over diffusers.js (onnx runtime).
 *
 * forward decodes a 4xHxW latent to 3x(8H)x(8W) pixels with the VAE after
 * running the denoising loop seeded by that latent; invert runs the DDIM
 * loop backwards from the encoded image.  The runtime and weights are heavy,
 * so everything is imported lazily and a missing runtime surfaces as a
 * model-load failure at startup (handshake error), never mid-stream.
 */
export async function loadDiffusionBackend(options: DiffusionOptions): Promise<Backend> {
  let diffusers: any;
  try {
    diffusers = await import("@aislamov/diffusers.js" as string);
  } catch (err) {
    throw new Error(
      `diffusion runtime unavailable (install @aislamov/diffusers.js and model ` +
        `weights for ${options.modelId}): ${String(err)}`,
    );
  }
  const pipe = await diffusers.DiffusionPipeline.fromPretrained(options.modelId);
  return {
    async forward(input: Tensor): Promise<Tensor> {
      const image = await pipe.latentToImage(input.data, {
        shape: input.shape,
        numInferenceSteps: options.steps,
        guidanceScale: options.guidance,
      });
      return { shape: image.shape, data: image.data };
    },
    async invert(input: Tensor): Promise<Tensor> {
      const latent = await pipe.imageToLatent(input.data, {
        shape: input.shape,
        numInferenceSteps: options.steps,
        guidanceScale: options.guidance,
      });
      return { shape: latent.shape, data: latent.data };
    },
  };
}
