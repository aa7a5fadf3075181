/**
 * Usage:
 *   feature-exporter --out DIR [options] file.wav [file2.wav ...]
 *
 * Options:
 *   --model NAME        "synthetic" (default) or a Hugging Face model id
 *   --frame-rate HZ     synthetic backend frame rate (default 50)
 *   --layers 0,1,2      keep only these stacked layers (default: all)
 *   --feature-dim N     synthetic backend feature width (default 16)
 *   --num-layers N      synthetic backend layer count (default 4)
 */

import { SyntheticBackend, TransformersBackend, type FeatureBackend } from "./backend.js";
import { runExport } from "./export.js";

interface CliArgs {
  out: string;
  model: string;
  frameRate: number;
  featureDim: number;
  numLayers: number;
  layers?: number[];
  files: string[];
}

export function parseArgs(argv: string[]): CliArgs {
  const args: CliArgs = {
    out: "",
    model: "synthetic",
    frameRate: 50,
    featureDim: 16,
    numLayers: 4,
    files: [],
  };
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    const next = () => {
      i++;
      if (i >= argv.length) throw new Error(`missing value for ${arg}`);
      return argv[i];
    };
    if (arg === "--out") args.out = next();
    else if (arg === "--model") args.model = next();
    else if (arg === "--frame-rate") args.frameRate = Number(next());
    else if (arg === "--feature-dim") args.featureDim = Number(next());
    else if (arg === "--num-layers") args.numLayers = Number(next());
    else if (arg === "--layers") args.layers = next().split(",").map((s) => Number.parseInt(s, 10));
    else if (arg === "--help" || arg === "-h") {
      args.files = [];
      args.out = "";
      return args;
    } else if (arg.startsWith("--")) throw new Error(`unknown flag ${arg}`);
    else args.files.push(arg);
  }
  return args;
}

export async function main(argv: string[]): Promise<number> {
  let args: CliArgs;
  try {
    args = parseArgs(argv);
  } catch (error) {
    console.error(String(error instanceof Error ? error.message : error));
    return 1;
  }
  if (!args.out || args.files.length === 0) {
    console.log("usage: feature-exporter --out DIR [--model synthetic|<hf-id>] file.wav ...");
    return args.out || args.files.length ? 1 : 0;
  }
  const backend: FeatureBackend =
    args.model === "synthetic"
      ? new SyntheticBackend({
          frameRateHz: args.frameRate,
          featureDim: args.featureDim,
          numLayers: args.numLayers,
        })
      : new TransformersBackend({ modelId: args.model });
  const result = await runExport({
    audioPaths: args.files,
    backend,
    outputDir: args.out,
    layers: args.layers,
  });
  console.log(
    `done: ${result.exported.length} exported, ${result.failures.length} failed, ` +
      `manifest fragment at ${result.manifestFragmentPath}`,
  );
  return result.failures.length === 0 ? 0 : 1;
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url === new URL(`file://${process.argv[1]}`).href;
if (invokedDirectly) {
  main(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
