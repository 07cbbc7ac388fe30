/**
 * Command-line mirror of the engine's `export-maps` verb for the bundled
 * demo classifier.  Reads the same JSON config dialect (seed,
 * samples_per_image, n_eval_images, image_side, out_dir) and writes
 * scoreable containers:
 *
 *     npx tsx src/cli.ts --config cfg.json --out runs/adapter
 *     cose score-external runs/adapter/maps
 *
 * The demo classifier is a fixed linear model over pixels; its saliency
 * callable is the exact |weight x input| map of that linear model.  Real
 * users supply their own ModelFn/SaliencyFn through the exportRun API.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { exportRun, Image, linearModel, linearSaliency, makeRng } from "./index.js";
import { sampleTransform } from "./transforms.js";

interface CliConfig {
  seed: number;
  samples_per_image: number;
  n_eval_images: number;
  image_side: number;
  out_dir: string;
}

const DEFAULTS: CliConfig = {
  seed: 0,
  samples_per_image: 5,
  n_eval_images: 8,
  image_side: 32,
  out_dir: "runs/adapter",
};

function parseArgs(argv: string[]): { config?: string; out?: string; seed?: number } {
  const out: { config?: string; out?: string; seed?: number } = {};
  for (let i = 0; i < argv.length; i++) {
    if (argv[i] === "--config") out.config = argv[++i];
    else if (argv[i] === "--out") out.out = argv[++i];
    else if (argv[i] === "--seed") out.seed = Number(argv[++i]);
    else {
      console.error(`unknown argument ${argv[i]}`);
      process.exit(2);
    }
  }
  return out;
}

export function main(argv: string[]): number {
  const args = parseArgs(argv);
  let config = { ...DEFAULTS };
  if (args.config) {
    const doc = JSON.parse(fs.readFileSync(args.config, "utf-8"));
    for (const key of Object.keys(doc)) {
      if (key in config) (config as Record<string, unknown>)[key] = doc[key];
    }
  }
  if (args.seed !== undefined) config.seed = args.seed;
  if (args.out) config.out_dir = args.out;

  const rng = makeRng(config.seed);
  const side = config.image_side;
  const k = 3;
  const { model, weights } = linearModel(side, k, rng);

  const images: { id: string; image: Image }[] = [];
  for (let i = 0; i < config.n_eval_images; i++) {
    const data = new Float32Array(side * side * 3);
    for (let j = 0; j < data.length; j++) data[j] = rng();
    images.push({ id: `img${String(i).padStart(4, "0")}`, image: { h: side, w: side, c: 3, data } });
  }
  const transforms = images.map(() =>
    Array.from({ length: config.samples_per_image }, () => sampleTransform(rng)),
  );
  const scaled = linearModel(side, k, makeRng(config.seed + 1));
  const checkpoints = [{ epoch: 0, model: scaled.model, accuracy: 1 / k }];

  const files = exportRun({
    model,
    saliency: linearSaliency(weights),
    methodName: "linear_gradient",
    images,
    transforms,
    checkpoints,
    outDir: path.join(config.out_dir, "maps"),
    modelId: "demo-linear",
    datasetId: "demo-noise",
  });
  console.log(`wrote ${files.length} containers under ${path.join(config.out_dir, "maps")}`);
  return 0;
}

if (process.argv[1] && path.resolve(process.argv[1]) === path.resolve(new URL(import.meta.url).pathname)) {
  process.exit(main(process.argv.slice(2)));
}
