import { execFileSync } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { afterAll, describe, expect, test } from "vitest";

import { SyntheticBackend } from "../src/backend.js";
import { runExport } from "../src/export.js";
import { decodeNpy } from "../src/npy.js";
import { encodeWavPcm16 } from "../src/wav.js";

const workDir = fs.mkdtempSync(path.join(os.tmpdir(), "exporter-test-"));
afterAll(() => fs.rmSync(workDir, { recursive: true, force: true }));

function clickTrack(seconds: number, rate: number, periodS: number): Float32Array {
  const samples = new Float32Array(Math.round(seconds * rate));
  for (let t = 0; t < seconds; t += periodS) {
    const at = Math.round(t * rate);
    for (let i = 0; i < 32 && at + i < samples.length; i++) {
      samples[at + i] = 0.9 * (1 - i / 32);
    }
  }
  return samples;
}

function writeWav(name: string, samples: Float32Array, rate: number): string {
  const file = path.join(workDir, name);
  fs.writeFileSync(file, encodeWavPcm16(samples, rate));
  return file;
}

describe("export pipeline", () => {
  test("ten-second clip yields t within one frame of duration * rate", async () => {
    const wav = writeWav("ten.wav", clickTrack(10.0, 16000, 0.5), 16000);
    const backend = new SyntheticBackend({ frameRateHz: 50, numLayers: 4, featureDim: 16 });
    const result = await runExport({ audioPaths: [wav], backend, outputDir: workDir });
    expect(result.failures).toEqual([]);
    const [file] = result.exported;
    expect(file.shape[0]).toBe(4);
    expect(file.shape[1]).toBe(16);
    expect(Math.abs(file.shape[2] - 10.0 * 50)).toBeLessThanOrEqual(1);
    const tensor = decodeNpy(fs.readFileSync(file.featurePath));
    expect(tensor.shape).toEqual(file.shape);
    expect(Array.from(tensor.data).every(Number.isFinite)).toBe(true);
  });

  test("silence stays finite", async () => {
    const wav = writeWav("silence.wav", new Float32Array(16000), 16000);
    const backend = new SyntheticBackend({ frameRateHz: 25, numLayers: 2, featureDim: 8 });
    const result = await runExport({ audioPaths: [wav], backend, outputDir: workDir });
    expect(result.failures).toEqual([]);
    const tensor = decodeNpy(fs.readFileSync(result.exported[0].featurePath));
    expect(Array.from(tensor.data).every(Number.isFinite)).toBe(true);
  });

  test("re-export is byte-identical", async () => {
    const wav = writeWav("repeat.wav", clickTrack(3.0, 8000, 0.4), 8000);
    const backend = new SyntheticBackend();
    const first = await runExport({ audioPaths: [wav], backend, outputDir: path.join(workDir, "a") });
    const second = await runExport({ audioPaths: [wav], backend, outputDir: path.join(workDir, "b") });
    const bytesA = fs.readFileSync(first.exported[0].featurePath);
    const bytesB = fs.readFileSync(second.exported[0].featurePath);
    expect(bytesA.equals(bytesB)).toBe(true);
  });

  test("layer selection narrows the stacked axis", async () => {
    const wav = writeWav("layers.wav", clickTrack(2.0, 8000, 0.25), 8000);
    const backend = new SyntheticBackend({ numLayers: 6, featureDim: 8 });
    const result = await runExport({
      audioPaths: [wav],
      backend,
      outputDir: path.join(workDir, "sel"),
      layers: [0, 3, 5],
    });
    expect(result.exported[0].shape[0]).toBe(3);
    await expect(
      runExport({
        audioPaths: [wav],
        backend,
        outputDir: path.join(workDir, "sel2"),
        layers: [99],
      }),
    ).resolves.toMatchObject({ exported: [], failures: [{ audioPath: wav, error: expect.stringContaining("out of range") }] });
  });

  test("bad files are reported and the job continues", async () => {
    const bad = path.join(workDir, "broken.wav");
    fs.writeFileSync(bad, Buffer.from("not audio"));
    const good = writeWav("good.wav", clickTrack(1.0, 8000, 0.5), 8000);
    const result = await runExport({
      audioPaths: [bad, good],
      backend: new SyntheticBackend(),
      outputDir: path.join(workDir, "mixed"),
    });
    expect(result.failures).toHaveLength(1);
    expect(result.exported).toHaveLength(1);
  });

  test("manifest fragment lists every exported piece with the frame rate", async () => {
    const wavs = [
      writeWav("m1.wav", clickTrack(2.0, 8000, 0.5), 8000),
      writeWav("m2.wav", clickTrack(2.5, 8000, 0.4), 8000),
    ];
    const out = path.join(workDir, "fragment");
    const result = await runExport({
      audioPaths: wavs,
      backend: new SyntheticBackend({ frameRateHz: 40 }),
      outputDir: out,
    });
    const fragment = JSON.parse(fs.readFileSync(result.manifestFragmentPath, "utf-8"));
    expect(fragment.frame_rate_hz).toBe(40);
    expect(fragment.entries).toHaveLength(2);
    expect(fragment.entries[0]).toEqual({ piece_id: "m1", feature_path: "m1.npy" });
    for (const file of result.exported) {
      const sidecar = JSON.parse(fs.readFileSync(`${file.featurePath}.json`, "utf-8"));
      expect(sidecar.frame_rate_hz).toBe(40);
    }
  });

  test("exported file loads through the tracker's reader", async () => {
    let pythonOk = true;
    try {
      execFileSync("python3", ["-c", "import beatkit"], { stdio: "ignore" });
    } catch {
      pythonOk = false;
    }
    if (!pythonOk) {
      console.warn("python3 + beatkit not available; skipping cross-reader check");
      return;
    }
    const wav = writeWav("cross.wav", clickTrack(10.0, 16000, 0.5), 16000);
    const out = path.join(workDir, "cross");
    const result = await runExport({
      audioPaths: [wav],
      backend: new SyntheticBackend({ frameRateHz: 50 }),
      outputDir: out,
    });
    const script = [
      "import sys, json",
      "from beatkit.data_io import read_features",
      "tensor = read_features(sys.argv[1])",
      "print(json.dumps({'shape': list(tensor.shape), 'fps': tensor.frame_rate_hz}))",
    ].join("\n");
    const stdout = execFileSync("python3", ["-c", script, result.exported[0].featurePath], {
      encoding: "utf-8",
    });
    const loaded = JSON.parse(stdout.trim());
    expect(loaded.shape).toEqual(Array.from(result.exported[0].shape));
    expect(loaded.fps).toBe(50);
    expect(Math.abs(loaded.shape[2] - 500)).toBeLessThanOrEqual(1);
  });
});
