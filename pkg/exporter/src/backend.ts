/**
 * Feature extraction backends.
 *
 * A backend turns a mono audio clip into layer-stacked hidden states
 * [layers, features, frames] at a fixed frame rate. Two implementations:
 *
 * - SyntheticBackend: deterministic, dependency-free features derived from
 *   windowed signal statistics. Always available; used by the tests and for
 *   offline smoke runs.
 * - TransformersBackend: wraps a pretrained audio encoder through
 *   @huggingface/transformers (install separately). Every encoder layer's
 *   hidden states are exported.
 */

import type { AudioClip } from "./wav.js";
import type { Rank3 } from "./npy.js";

export interface FeatureBackend {
  /** Identifier recorded in sidecars and manifest fragments. */
  readonly name: string;
  readonly frameRateHz: number;
  readonly numLayers: number;
  readonly featureDim: number;
  extract(clip: AudioClip): Promise<Rank3>;
}

export interface SyntheticOptions {
  frameRateHz?: number;
  numLayers?: number;
  featureDim?: number;
}

/** Small deterministic PRNG for the fixed projection coefficients. */
function coefficient(layer: number, feature: number, tap: number): number {
  let state = (layer * 1_000_003 + feature * 10_007 + tap * 101 + 12345) >>> 0;
  state ^= state << 13;
  state >>>= 0;
  state ^= state >> 17;
  state ^= state << 5;
  state >>>= 0;
  return (state / 0xffffffff) * 2 - 1;
}

export class SyntheticBackend implements FeatureBackend {
  readonly name: string;
  readonly frameRateHz: number;
  readonly numLayers: number;
  readonly featureDim: number;

  constructor(options: SyntheticOptions = {}) {
    this.frameRateHz = options.frameRateHz ?? 50;
    this.numLayers = options.numLayers ?? 4;
    this.featureDim = options.featureDim ?? 16;
    this.name = `synthetic-v1@${this.frameRateHz}hz`;
    if (this.frameRateHz <= 0 || this.numLayers < 1 || this.featureDim < 1) {
      throw new Error("synthetic backend options must be positive");
    }
  }

  async extract(clip: AudioClip): Promise<Rank3> {
    const duration = clip.samples.length / clip.sampleRate;
    const frames = Math.max(1, Math.round(duration * this.frameRateHz));
    const hop = clip.sampleRate / this.frameRateHz;
    const n = this.numLayers;
    const f = this.featureDim;
    const data = new Float32Array(n * f * frames);

    // per-frame signal statistics shared by every layer
    const stats = new Float64Array(frames * 4);
    for (let j = 0; j < frames; j++) {
      const start = Math.min(clip.samples.length, Math.round(j * hop));
      const end = Math.min(clip.samples.length, Math.round((j + 1) * hop));
      let energy = 0;
      let flux = 0;
      let crossings = 0;
      let peak = 0;
      for (let i = start; i < end; i++) {
        const x = clip.samples[i];
        energy += x * x;
        peak = Math.max(peak, Math.abs(x));
        if (i > start) {
          flux += Math.abs(x - clip.samples[i - 1]);
          if (x >= 0 !== clip.samples[i - 1] >= 0) crossings++;
        }
      }
      const width = Math.max(1, end - start);
      stats[j * 4] = Math.sqrt(energy / width);
      stats[j * 4 + 1] = flux / width;
      stats[j * 4 + 2] = crossings / width;
      stats[j * 4 + 3] = peak;
    }

    for (let l = 0; l < n; l++) {
      for (let k = 0; k < f; k++) {
        const w0 = coefficient(l, k, 0);
        const w1 = coefficient(l, k, 1);
        const w2 = coefficient(l, k, 2);
        const w3 = coefficient(l, k, 3);
        const bias = 0.1 * coefficient(l, k, 4);
        for (let j = 0; j < frames; j++) {
          const mix =
            w0 * stats[j * 4] + w1 * stats[j * 4 + 1] + w2 * stats[j * 4 + 2] + w3 * stats[j * 4 + 3];
          data[(l * f + k) * frames + j] = Math.tanh(3 * mix + bias);
        }
      }
    }
    return { shape: [n, f, frames], data };
  }
}

export interface TransformersOptions {
  /** Hugging Face model id, e.g. an audio encoder with hidden-state output. */
  modelId: string;
  /** Target sample rate expected by the model's processor. */
  sampleRate?: number;
}

export class TransformersBackend implements FeatureBackend {
  readonly name: string;
  frameRateHz = 0; // learned from the first extraction
  numLayers = 0;
  featureDim = 0;
  private readonly modelId: string;
  private readonly targetRate: number;
  private pipeline: { processor: any; model: any } | null = null;

  constructor(options: TransformersOptions) {
    this.modelId = options.modelId;
    this.targetRate = options.sampleRate ?? 24000;
    this.name = options.modelId;
  }

  private async load() {
    if (this.pipeline) return this.pipeline;
    let transformers: any;
    try {
      // optional dependency, resolved only when a pretrained model is requested
      const specifier = "@huggingface/transformers";
      transformers = await import(specifier);
    } catch {
      throw new Error(
        "@huggingface/transformers is not installed; run `npm install @huggingface/transformers` " +
          "or use --model synthetic",
      );
    }
    const processor = await transformers.AutoProcessor.from_pretrained(this.modelId);
    const model = await transformers.AutoModel.from_pretrained(this.modelId, {
      dtype: "fp32",
    });
    this.pipeline = { processor, model };
    return this.pipeline;
  }

  async extract(clip: AudioClip): Promise<Rank3> {
    const { processor, model } = await this.load();
    const audio = resampleLinear(clip.samples, clip.sampleRate, this.targetRate);
    const inputs = await processor(audio, { sampling_rate: this.targetRate });
    const output = await model({ ...inputs, output_hidden_states: true });
    const hidden: any[] = output.hidden_states;
    if (!hidden || hidden.length === 0) {
      throw new Error(`${this.modelId} returned no hidden states`);
    }
    const layers = hidden.length;
    const [, frames, width] = hidden[0].dims as [number, number, number];
    const data = new Float32Array(layers * width * frames);
    for (let l = 0; l < layers; l++) {
      const layer = hidden[l].data as Float32Array;
      for (let j = 0; j < frames; j++) {
        for (let k = 0; k < width; k++) {
          data[(l * width + k) * frames + j] = layer[j * width + k];
        }
      }
    }
    this.numLayers = layers;
    this.featureDim = width;
    this.frameRateHz = frames / (clip.samples.length / clip.sampleRate);
    return { shape: [layers, width, frames], data };
  }
}

function resampleLinear(samples: Float32Array, from: number, to: number): Float32Array {
  if (from === to) return samples;
  const outLength = Math.max(1, Math.round((samples.length * to) / from));
  const out = new Float32Array(outLength);
  for (let i = 0; i < outLength; i++) {
    const pos = (i * (samples.length - 1)) / Math.max(1, outLength - 1);
    const lo = Math.floor(pos);
    const hi = Math.min(samples.length - 1, lo + 1);
    out[i] = samples[lo] + (samples[hi] - samples[lo]) * (pos - lo);
  }
  return out;
}
