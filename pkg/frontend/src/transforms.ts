/**
 * Forward application of the engine's transform suite, semantically
 * matched to the scoring engine: the same eleven transforms, the same
 * 61-point linear magnitude scale, the same ranges and border rules.
 * Only the forward direction lives here; geometric inversion on maps is
 * the engine's job (single source of truth for the inverse warps).
 *
 * Images are row-major HWC Float32Array buffers with values in [0, 1].
 */

export const MAGNITUDE_STEPS = 61;

export const PHOTOMETRIC = ["blur", "contrast", "brightness", "equalize", "smooth", "sharpness", "color"] as const;
export const GEOMETRIC = ["translate_x", "translate_y", "rotate", "flip_lr"] as const;
export const ALL_TRANSFORMS = [...PHOTOMETRIC, ...GEOMETRIC];

const SIGNABLE = new Set(["brightness", "contrast", "color", "sharpness", "rotate", "translate_x", "translate_y"]);
const FIXED_MAGNITUDE = new Set(["equalize", "flip_lr"]);

const LUMA = [0.299, 0.587, 0.114];

export interface Image {
  h: number;
  w: number;
  c: number;
  data: Float32Array; // row-major HWC
}

export class TransformError extends Error {}

export interface TransformSpec {
  name: string;
  magnitudeIndex: number;
  signed: boolean;
}

export function makeSpec(name: string, magnitudeIndex: number, signed = false): TransformSpec {
  if (!ALL_TRANSFORMS.includes(name as (typeof ALL_TRANSFORMS)[number])) {
    throw new TransformError(`unknown transform ${JSON.stringify(name)}`);
  }
  if (!Number.isInteger(magnitudeIndex) || magnitudeIndex < 0 || magnitudeIndex >= MAGNITUDE_STEPS) {
    throw new TransformError(`magnitude index ${magnitudeIndex} outside [0, ${MAGNITUDE_STEPS - 1}]`);
  }
  return { name, magnitudeIndex, signed: SIGNABLE.has(name) ? signed : false };
}

export function specToToken(spec: TransformSpec): string {
  return `${spec.name}:${spec.magnitudeIndex}:${spec.signed ? "-" : "+"}`;
}

export function specFromToken(token: string): TransformSpec {
  const parts = token.trim().split(":");
  if (parts.length !== 3 || (parts[2] !== "+" && parts[2] !== "-")) {
    throw new TransformError(`bad transform token ${JSON.stringify(token)}`);
  }
  const idx = Number(parts[1]);
  if (!Number.isInteger(idx)) throw new TransformError(`bad magnitude in token ${JSON.stringify(token)}`);
  return makeSpec(parts[0], idx, parts[2] === "-");
}

export function specKind(spec: TransformSpec): "geometric" | "photometric" {
  return (GEOMETRIC as readonly string[]).includes(spec.name) ? "geometric" : "photometric";
}

/** Uniform transform sampling; matches the engine's distribution (name,
 * magnitude, sign), not its bit stream. */
export function sampleTransform(rand: () => number): TransformSpec {
  const name = ALL_TRANSFORMS[Math.floor(rand() * ALL_TRANSFORMS.length)];
  let idx = Math.floor(rand() * MAGNITUDE_STEPS);
  const signed = SIGNABLE.has(name) ? rand() < 0.5 : false;
  if (FIXED_MAGNITUDE.has(name)) idx = 0;
  return makeSpec(name, idx, signed);
}

function roundHalfEven(x: number): number {
  const f = Math.floor(x);
  const diff = x - f;
  if (diff > 0.5) return f + 1;
  if (diff < 0.5) return f;
  return f % 2 === 0 ? f : f + 1;
}

export function resolvedMagnitude(spec: TransformSpec, side?: number): number {
  const s = spec.magnitudeIndex / (MAGNITUDE_STEPS - 1);
  switch (spec.name) {
    case "brightness":
    case "contrast":
    case "color":
    case "sharpness": {
      const dev = 0.99 * s;
      return spec.signed ? 1.0 - dev : 1.0 + dev;
    }
    case "blur":
      return 2.0 * s;
    case "smooth":
      return s;
    case "rotate": {
      const deg = 30.0 * s;
      return spec.signed ? -deg : deg;
    }
    case "translate_x":
    case "translate_y": {
      if (side === undefined) throw new TransformError("translation magnitude needs the side length");
      const px = roundHalfEven(0.1 * s * side); // engine-side snapping rounds half to even
      return spec.signed ? -px : px;
    }
    default:
      return 0.0; // equalize, flip_lr
  }
}

// ---------------------------------------------------------------------------
// helpers (float64 math, clamped float32 output, mirroring the engine)

function newImage(h: number, w: number, c: number): Image {
  return { h, w, c, data: new Float32Array(h * w * c) };
}

function meanColor(img: Image): number[] {
  const acc = new Array(img.c).fill(0);
  const n = img.h * img.w;
  for (let p = 0; p < n; p++) {
    for (let ch = 0; ch < img.c; ch++) acc[ch] += img.data[p * img.c + ch];
  }
  return acc.map((v) => v / n);
}

function grayAt(img: Image, p: number): number {
  let g = 0;
  for (let ch = 0; ch < Math.min(3, img.c); ch++) g += img.data[p * img.c + ch] * LUMA[ch];
  return g;
}

const clamp01 = (v: number) => (v < 0 ? 0 : v > 1 ? 1 : v);

function reflectIndex(i: number, n: number): number {
  if (i < 0) i = -i;
  if (i > n - 1) i = 2 * (n - 1) - i;
  return i;
}

/** Separable convolution with reflect padding along rows then columns. */
function convolveSeparable(img: Image, kernel: number[]): Float64Array {
  const { h, w, c } = img;
  const radius = (kernel.length - 1) / 2;
  const tmp = new Float64Array(h * w * c);
  for (let r = 0; r < h; r++) {
    for (let col = 0; col < w; col++) {
      for (let ch = 0; ch < c; ch++) {
        let acc = 0;
        for (let k = -radius; k <= radius; k++) {
          acc += kernel[k + radius] * img.data[(reflectIndex(r + k, h) * w + col) * c + ch];
        }
        tmp[(r * w + col) * c + ch] = acc;
      }
    }
  }
  const out = new Float64Array(h * w * c);
  for (let r = 0; r < h; r++) {
    for (let col = 0; col < w; col++) {
      for (let ch = 0; ch < c; ch++) {
        let acc = 0;
        for (let k = -radius; k <= radius; k++) {
          acc += kernel[k + radius] * tmp[(r * w + reflectIndex(col + k, w)) * c + ch];
        }
        out[(r * w + col) * c + ch] = acc;
      }
    }
  }
  return out;
}

function gaussianKernel(sigma: number): number[] {
  const radius = Math.max(1, Math.ceil(3 * sigma));
  const k: number[] = [];
  let sum = 0;
  for (let t = -radius; t <= radius; t++) {
    const v = Math.exp(-0.5 * (t / sigma) ** 2);
    k.push(v);
    sum += v;
  }
  return k.map((v) => v / sum);
}

const BOX3 = [1 / 3, 1 / 3, 1 / 3];

function fromFloat64(img: Image, vals: Float64Array): Image {
  const out = newImage(img.h, img.w, img.c);
  for (let i = 0; i < vals.length; i++) out.data[i] = clamp01(vals[i]);
  return out;
}

// ---------------------------------------------------------------------------

export function applyTransform(spec: TransformSpec, img: Image, fill?: number[]): Image {
  const { h, w, c } = img;
  const n = h * w * c;
  const name = spec.name;

  if (name === "flip_lr") {
    const out = newImage(h, w, c);
    for (let r = 0; r < h; r++) {
      for (let col = 0; col < w; col++) {
        for (let ch = 0; ch < c; ch++) {
          out.data[(r * w + col) * c + ch] = img.data[(r * w + (w - 1 - col)) * c + ch];
        }
      }
    }
    return out;
  }

  if (name === "translate_x" || name === "translate_y") {
    const axisLen = name === "translate_x" ? w : h;
    const px = resolvedMagnitude(spec, axisLen);
    if (px === 0) return { h, w, c, data: img.data.slice() };
    const fillColor = fill ?? meanColor(img);
    const out = newImage(h, w, c);
    for (let r = 0; r < h; r++) {
      for (let col = 0; col < w; col++) {
        const sr = name === "translate_y" ? r - px : r;
        const sc = name === "translate_x" ? col - px : col;
        for (let ch = 0; ch < c; ch++) {
          out.data[(r * w + col) * c + ch] =
            sr >= 0 && sr < h && sc >= 0 && sc < w
              ? img.data[(sr * w + sc) * c + ch]
              : clamp01(fillColor[ch]);
        }
      }
    }
    return out;
  }

  if (name === "rotate") {
    const deg = resolvedMagnitude(spec);
    if (deg === 0) return { h, w, c, data: img.data.slice() };
    const fillColor = fill ?? meanColor(img);
    // sample with the inverse rotation about the image center,
    // (row, col) frame: content rotates CCW for positive angles
    const th = (-deg * Math.PI) / 180;
    const cosT = Math.cos(th);
    const sinT = Math.sin(th);
    const cy = (h - 1) / 2;
    const cx = (w - 1) / 2;
    const out = newImage(h, w, c);
    for (let r = 0; r < h; r++) {
      for (let col = 0; col < w; col++) {
        const dy = r - cy;
        const dx = col - cx;
        const sr = cosT * dy + sinT * dx + cy;
        const sc = -sinT * dy + cosT * dx + cx;
        const inside = sr >= 0 && sr <= h - 1 && sc >= 0 && sc <= w - 1;
        for (let ch = 0; ch < c; ch++) {
          if (!inside) {
            out.data[(r * w + col) * c + ch] = clamp01(fillColor[ch]);
            continue;
          }
          const r0 = Math.floor(sr);
          const c0 = Math.floor(sc);
          const r1 = Math.min(r0 + 1, h - 1);
          const c1 = Math.min(c0 + 1, w - 1);
          const wr = sr - r0;
          const wc = sc - c0;
          const get = (rr: number, cc: number) => img.data[(rr * w + cc) * c + ch];
          const top = get(r0, c0) * (1 - wc) + get(r0, c1) * wc;
          const bot = get(r1, c0) * (1 - wc) + get(r1, c1) * wc;
          out.data[(r * w + col) * c + ch] = clamp01(top * (1 - wr) + bot * wr);
        }
      }
    }
    return out;
  }

  // photometric
  const vals = new Float64Array(n);
  if (name === "brightness") {
    const f = resolvedMagnitude(spec);
    for (let i = 0; i < n; i++) vals[i] = img.data[i] * f;
  } else if (name === "contrast") {
    const f = resolvedMagnitude(spec);
    let mean = 0;
    for (let p = 0; p < h * w; p++) mean += grayAt(img, p);
    mean /= h * w;
    for (let i = 0; i < n; i++) vals[i] = mean + (img.data[i] - mean) * f;
  } else if (name === "color") {
    const f = resolvedMagnitude(spec);
    for (let p = 0; p < h * w; p++) {
      const g = grayAt(img, p);
      for (let ch = 0; ch < c; ch++) {
        vals[p * c + ch] = g + (img.data[p * c + ch] - g) * f;
      }
    }
  } else if (name === "sharpness") {
    const f = resolvedMagnitude(spec);
    const smooth = convolveSeparable(img, BOX3);
    for (let i = 0; i < n; i++) vals[i] = smooth[i] + (img.data[i] - smooth[i]) * f;
  } else if (name === "smooth") {
    const alpha = resolvedMagnitude(spec);
    const smooth = convolveSeparable(img, BOX3);
    for (let i = 0; i < n; i++) vals[i] = (1 - alpha) * img.data[i] + alpha * smooth[i];
  } else if (name === "blur") {
    const sigma = resolvedMagnitude(spec);
    if (sigma <= 0) return { h, w, c, data: img.data.slice() };
    const blurred = convolveSeparable(img, gaussianKernel(sigma));
    vals.set(blurred);
  } else if (name === "equalize") {
    return equalize(img);
  } else {
    throw new TransformError(`unhandled transform ${name}`);
  }
  return fromFloat64(img, vals);
}

/** Per-channel 256-bin histogram equalization; single-bin channels
 * (constant image) pass through unchanged. */
export function equalize(img: Image, bins = 256): Image {
  const { h, w, c } = img;
  const out = newImage(h, w, c);
  const npix = h * w;
  for (let ch = 0; ch < c; ch++) {
    const q = new Int32Array(npix);
    const hist = new Int32Array(bins);
    for (let p = 0; p < npix; p++) {
      let v = Math.round(img.data[p * c + ch] * (bins - 1));
      v = v < 0 ? 0 : v > bins - 1 ? bins - 1 : v;
      q[p] = v;
      hist[v]++;
    }
    let nonzero = 0;
    let first = -1;
    for (let b = 0; b < bins; b++) {
      if (hist[b] > 0) {
        nonzero++;
        if (first < 0) first = b;
      }
    }
    if (nonzero <= 1) {
      for (let p = 0; p < npix; p++) out.data[p * c + ch] = img.data[p * c + ch];
      continue;
    }
    const cdf = new Float64Array(bins);
    let run = 0;
    for (let b = 0; b < bins; b++) {
      run += hist[b];
      cdf[b] = run;
    }
    const cdfMin = cdf[first];
    for (let p = 0; p < npix; p++) {
      out.data[p * c + ch] = clamp01((cdf[q[p]] - cdfMin) / (npix - cdfMin));
    }
  }
  return out;
}
