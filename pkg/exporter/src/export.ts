/**
 * Export pipeline: audio files -> feature containers + manifest fragment.
 *
 * Each audio file becomes `<stem>.npy` (float32, [layers, features, frames])
 * plus a `<stem>.npy.json` sidecar carrying the frame rate and provenance.
 * Per-file failures are logged and skipped; the job always runs to the end.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import type { FeatureBackend } from "./backend.js";
import { encodeNpy, type Rank3 } from "./npy.js";
import { decodeWav } from "./wav.js";

export interface ExportJob {
  audioPaths: string[];
  backend: FeatureBackend;
  outputDir: string;
  /** Encoder layers to keep (indices into the stacked axis); default all. */
  layers?: number[];
}

export interface ExportedFile {
  audioPath: string;
  featurePath: string;
  shape: [number, number, number];
  frameRateHz: number;
}

export interface ExportResult {
  exported: ExportedFile[];
  failures: { audioPath: string; error: string }[];
  manifestFragmentPath: string;
}

function selectLayers(tensor: Rank3, layers: number[] | undefined): Rank3 {
  if (!layers || layers.length === 0) return tensor;
  const [n, f, t] = tensor.shape;
  const bad = layers.filter((l) => l < 0 || l >= n);
  if (bad.length > 0) {
    throw new Error(`layer indices out of range for ${n}-layer model: ${bad.join(", ")}`);
  }
  const data = new Float32Array(layers.length * f * t);
  layers.forEach((l, i) => {
    data.set(tensor.data.subarray(l * f * t, (l + 1) * f * t), i * f * t);
  });
  return { shape: [layers.length, f, t], data };
}

function assertFinite(tensor: Rank3, label: string): void {
  for (let i = 0; i < tensor.data.length; i++) {
    if (!Number.isFinite(tensor.data[i])) {
      throw new Error(`${label}: non-finite value at flat index ${i}`);
    }
  }
}

function writeAtomic(target: string, payload: Buffer | string): void {
  const tmp = `${target}.tmp`;
  fs.writeFileSync(tmp, payload);
  fs.renameSync(tmp, target);
}

export async function runExport(job: ExportJob): Promise<ExportResult> {
  fs.mkdirSync(job.outputDir, { recursive: true });
  const exported: ExportedFile[] = [];
  const failures: { audioPath: string; error: string }[] = [];

  for (const audioPath of job.audioPaths) {
    try {
      const clip = decodeWav(fs.readFileSync(audioPath));
      const full = await job.backend.extract(clip);
      const tensor = selectLayers(full, job.layers);
      assertFinite(tensor, audioPath);
      const stem = path.basename(audioPath).replace(/\.[^.]+$/, "");
      const featurePath = path.join(job.outputDir, `${stem}.npy`);
      writeAtomic(featurePath, encodeNpy(tensor));
      const frameRate =
        job.backend.frameRateHz > 0
          ? job.backend.frameRateHz
          : tensor.shape[2] / (clip.samples.length / clip.sampleRate);
      writeAtomic(
        `${featurePath}.json`,
        JSON.stringify(
          {
            frame_rate_hz: frameRate,
            model: job.backend.name,
            layers: job.layers ?? "all",
            source: path.basename(audioPath),
          },
          null,
          2,
        ) + "\n",
      );
      exported.push({ audioPath, featurePath, shape: tensor.shape, frameRateHz: frameRate });
      console.log(
        `exported ${audioPath} -> ${featurePath} [${tensor.shape.join(" x ")}] @ ${frameRate} fps`,
      );
    } catch (error) {
      const message = error instanceof Error ? error.message : String(error);
      failures.push({ audioPath, error: message });
      console.error(`failed ${audioPath}: ${message}`);
    }
  }

  const fragment = {
    dataset: job.backend.name,
    frame_rate_hz: exported.length > 0 ? exported[0].frameRateHz : job.backend.frameRateHz,
    entries: exported.map((file) => ({
      piece_id: path.basename(file.featurePath, ".npy"),
      feature_path: path.basename(file.featurePath),
    })),
  };
  const manifestFragmentPath = path.join(job.outputDir, "export-manifest.json");
  writeAtomic(manifestFragmentPath, JSON.stringify(fragment, null, 2) + "\n");
  return { exported, failures, manifestFragmentPath };
}
