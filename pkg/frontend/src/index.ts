export { ContainerError, decodeContainer, encodeContainer, stableJson, VERSION } from "./container.js";
export type { Entry } from "./container.js";
export {
  ALL_TRANSFORMS,
  applyTransform,
  equalize,
  GEOMETRIC,
  makeSpec,
  MAGNITUDE_STEPS,
  PHOTOMETRIC,
  resolvedMagnitude,
  sampleTransform,
  specFromToken,
  specKind,
  specToToken,
  TransformError,
} from "./transforms.js";
export type { Image, TransformSpec } from "./transforms.js";
export { exportRun, ExportError } from "./export.js";
export type { Checkpoint, ExportOptions, MapHW, ModelFn, SaliencyFn } from "./export.js";

import type { Image } from "./transforms.js";
import type { MapHW, ModelFn, SaliencyFn } from "./export.js";

/** Small deterministic PRNG (mulberry32); good enough for demo sampling. */
export function makeRng(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** Fixed random linear classifier over flattened pixels: logits = W x. */
export function linearModel(side: number, k: number, rng: () => number): { model: ModelFn; weights: Float64Array } {
  const dim = side * side * 3;
  const weights = new Float64Array(dim * k);
  for (let i = 0; i < weights.length; i++) weights[i] = (rng() * 2 - 1) / Math.sqrt(dim);
  const model: ModelFn = (images: Image[]) =>
    images.map((img) => {
      const logits = new Array(k).fill(0);
      for (let i = 0; i < dim; i++) {
        const v = img.data[i];
        for (let cls = 0; cls < k; cls++) logits[cls] += weights[i * k + cls] * v;
      }
      return logits;
    });
  return { model, weights };
}

/** Exact |d logit / d pixel| map of the linear model, channel-max reduced
 * and min-max normalized: the closed-form counterpart of a vanilla
 * gradient map. */
export function linearSaliency(weights: Float64Array): SaliencyFn {
  return (_model: ModelFn, image: Image, targetClass: number): MapHW => {
    const { h, w, c } = image;
    const k = weights.length / (h * w * c);
    const out = new Float32Array(h * w);
    for (let p = 0; p < h * w; p++) {
      let best = 0;
      for (let ch = 0; ch < c; ch++) {
        const wv = Math.abs(weights[(p * c + ch) * k + targetClass]);
        if (wv > best) best = wv;
      }
      out[p] = best;
    }
    // min-max over the float32-rounded values, so 0 and 1 are hit exactly
    let lo = Infinity;
    let hi = -Infinity;
    for (const v of out) {
      if (v < lo) lo = v;
      if (v > hi) hi = v;
    }
    if (hi === lo) {
      out.fill(0.5);
    } else {
      for (let p = 0; p < out.length; p++) out[p] = (out[p] - lo) / (hi - lo);
    }
    return { h, w, data: out };
  };
}
