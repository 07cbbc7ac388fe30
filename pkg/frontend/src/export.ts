/**
 * Export bundle assembly: run a user-supplied classifier over original,
 * transformed, and checkpoint variants of each image, collect the
 * corresponding saliency maps, and write one container per
 * (method, image) in the layout `cose score-external` consumes:
 *
 *   <out>/<method>/<imageId>.cose
 *     entry  original            (H, W) float32 map of the untouched image
 *     entry  transform/NNN       map of the NNN-th transformed input
 *                                (before geometric inversion; the engine
 *                                applies the inverse warp itself)
 *     entry  checkpoint/EEEE     map under the epoch-EEEE checkpoint
 *     metadata                   predictions per variant, transform
 *                                tokens, optional checkpoint accuracies
 *
 * Every map entry must come with a prediction record and match the image
 * spatial dims; violations are rejected before anything is written.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { encodeContainer, Entry } from "./container.js";
import { applyTransform, Image, specToToken, TransformSpec } from "./transforms.js";

export interface MapHW {
  h: number;
  w: number;
  data: Float32Array;
}

/** Batch classifier: logits per image. */
export type ModelFn = (images: Image[]) => number[][];

/** Saliency callable over one image for a target class. */
export type SaliencyFn = (model: ModelFn, image: Image, targetClass: number) => MapHW;

export interface Checkpoint {
  epoch: number;
  model: ModelFn;
  accuracy?: number;
}

export interface ExportOptions {
  model: ModelFn;
  saliency: SaliencyFn;
  methodName: string;
  images: { id: string; image: Image }[];
  /** transforms[i] lists the specs applied to images[i] */
  transforms: TransformSpec[][];
  checkpoints?: Checkpoint[];
  outDir: string;
  fillColor?: number[];
  modelId?: string;
  datasetId?: string;
}

export class ExportError extends Error {}

function argmax(logits: number[]): number {
  let best = 0;
  for (let i = 1; i < logits.length; i++) if (logits[i] > logits[best]) best = i;
  return best;
}

function checkMap(map: MapHW, image: Image, what: string): void {
  if (map.h !== image.h || map.w !== image.w) {
    throw new ExportError(`${what}: map shape (${map.h}, ${map.w}) != image spatial dims (${image.h}, ${image.w})`);
  }
  if (map.data.length !== map.h * map.w) {
    throw new ExportError(`${what}: map payload length ${map.data.length} != ${map.h * map.w}`);
  }
}

export function exportRun(opts: ExportOptions): string[] {
  const { model, saliency, methodName, images, transforms, outDir } = opts;
  const checkpoints = opts.checkpoints ?? [];
  if (transforms.length !== images.length) {
    throw new ExportError(`transforms list length ${transforms.length} != image count ${images.length}`);
  }
  const methodDir = path.join(outDir, methodName);
  fs.mkdirSync(methodDir, { recursive: true });

  if (images.length === 0) {
    // header-only marker so an empty export is still a valid artifact
    const marker = path.join(methodDir, "empty.cose");
    fs.writeFileSync(marker, encodeContainer([], null));
    return [marker];
  }

  const written: string[] = [];
  for (let i = 0; i < images.length; i++) {
    const { id, image } = images[i];

    const entries: Entry[] = [];
    const predictions: Record<string, number> = {};
    const specTokens: Record<string, string> = {};
    const accuracies: Record<string, number> = {};

    const predOriginal = argmax(model([image])[0]);
    predictions["original"] = predOriginal;
    const mapOriginal = saliency(model, image, predOriginal);
    checkMap(mapOriginal, image, `${id} original`);
    entries.push({ name: "original", dims: [mapOriginal.h, mapOriginal.w], data: mapOriginal.data });

    transforms[i].forEach((spec, j) => {
      const name = `transform/${String(j).padStart(3, "0")}`;
      const transformed = applyTransform(spec, image, opts.fillColor);
      const pred = argmax(model([transformed])[0]);
      const map = saliency(model, transformed, pred);
      checkMap(map, image, `${id} ${name}`);
      entries.push({ name, dims: [map.h, map.w], data: map.data });
      predictions[name] = pred;
      specTokens[name] = specToToken(spec);
    });

    for (const cp of checkpoints) {
      const name = `checkpoint/${String(cp.epoch).padStart(4, "0")}`;
      const pred = argmax(cp.model([image])[0]);
      const map = saliency(cp.model, image, pred);
      checkMap(map, image, `${id} ${name}`);
      entries.push({ name, dims: [map.h, map.w], data: map.data });
      predictions[name] = pred;
      if (cp.accuracy !== undefined) accuracies[String(cp.epoch).padStart(4, "0")] = cp.accuracy;
    }

    const metadata = {
      kind: "maps",
      image_id: id,
      method: methodName,
      model_id: opts.modelId ?? "external-model",
      dataset_id: opts.datasetId ?? "external",
      predictions,
      transform_specs: specTokens,
      checkpoint_accuracy: accuracies,
    };
    const file = path.join(methodDir, `${id}.cose`);
    fs.writeFileSync(file, encodeContainer(entries, metadata));
    written.push(file);
  }
  return written;
}
