/**
 * Binary tensor container, byte-compatible with the engine's reader and
 * writer (see ../docs/container-format.md in the repository root).
 *
 * Layout (all integers little-endian):
 *   magic "COSE" | u32 version=1 | u32 entry count
 *   per entry: u32 name len | name UTF-8 | u32 rank | rank x u64 dims |
 *              u32 dtype (1 = float32 LE) | payload row-major
 *   u32 metadata length | UTF-8 JSON object (length 0 = empty)
 *
 * Floats are written through a DataView with explicit little-endian
 * ordering, so payloads round-trip bit-exactly on any host.
 */

const MAGIC = 0x45534f43; // "COSE" read as u32 LE
export const VERSION = 1;
export const DTYPE_FLOAT32 = 1;

export class ContainerError extends Error {}

export interface Entry {
  name: string;
  dims: number[];
  data: Float32Array;
}

function product(dims: number[]): number {
  return dims.reduce((a, b) => a * b, 1);
}

/** JSON.stringify with recursively sorted object keys (stable output). */
export function stableJson(doc: unknown): string {
  return JSON.stringify(sortKeys(doc));
}

function sortKeys(value: unknown): unknown {
  if (Array.isArray(value)) return value.map(sortKeys);
  if (value !== null && typeof value === "object") {
    const out: Record<string, unknown> = {};
    for (const key of Object.keys(value as Record<string, unknown>).sort()) {
      out[key] = sortKeys((value as Record<string, unknown>)[key]);
    }
    return out;
  }
  return value;
}

export function encodeContainer(entries: Entry[], metadata: object | null): Buffer {
  const seen = new Set<string>();
  for (const e of entries) {
    if (seen.has(e.name)) throw new ContainerError(`duplicate entry name ${JSON.stringify(e.name)}`);
    seen.add(e.name);
    if (e.data.length !== product(e.dims)) {
      throw new ContainerError(
        `entry ${e.name}: payload length ${e.data.length} != product(dims) ${product(e.dims)}`,
      );
    }
  }
  const metaBytes =
    metadata && Object.keys(metadata).length > 0 ? Buffer.from(stableJson(metadata), "utf-8") : Buffer.alloc(0);

  let size = 12;
  const nameBufs = entries.map((e) => Buffer.from(e.name, "utf-8"));
  for (let i = 0; i < entries.length; i++) {
    size += 4 + nameBufs[i].length + 4 + 8 * entries[i].dims.length + 4 + 4 * entries[i].data.length;
  }
  size += 4 + metaBytes.length;

  const buf = Buffer.alloc(size);
  const view = new DataView(buf.buffer, buf.byteOffset, buf.length);
  let pos = 0;
  view.setUint32(pos, MAGIC, true); pos += 4;
  view.setUint32(pos, VERSION, true); pos += 4;
  view.setUint32(pos, entries.length, true); pos += 4;
  for (let i = 0; i < entries.length; i++) {
    const e = entries[i];
    view.setUint32(pos, nameBufs[i].length, true); pos += 4;
    nameBufs[i].copy(buf, pos); pos += nameBufs[i].length;
    view.setUint32(pos, e.dims.length, true); pos += 4;
    for (const d of e.dims) {
      view.setBigUint64(pos, BigInt(d), true); pos += 8;
    }
    view.setUint32(pos, DTYPE_FLOAT32, true); pos += 4;
    for (let k = 0; k < e.data.length; k++) {
      view.setFloat32(pos, e.data[k], true); pos += 4;
    }
  }
  view.setUint32(pos, metaBytes.length, true); pos += 4;
  metaBytes.copy(buf, pos); pos += metaBytes.length;
  return buf;
}

export function decodeContainer(buf: Buffer): { entries: Entry[]; metadata: Record<string, unknown> } {
  const view = new DataView(buf.buffer, buf.byteOffset, buf.length);
  let pos = 0;
  const need = (n: number, what: string) => {
    if (pos + n > buf.length) throw new ContainerError(`container truncated while reading ${what}`);
  };
  need(4, "magic");
  if (view.getUint32(pos, true) !== MAGIC) throw new ContainerError("bad magic; not a container file");
  pos += 4;
  need(4, "version");
  const version = view.getUint32(pos, true); pos += 4;
  if (version !== VERSION) throw new ContainerError(`unsupported container version ${version}`);
  need(4, "entry count");
  const count = view.getUint32(pos, true); pos += 4;

  const entries: Entry[] = [];
  const seen = new Set<string>();
  for (let i = 0; i < count; i++) {
    need(4, `entry ${i} name length`);
    const nameLen = view.getUint32(pos, true); pos += 4;
    need(nameLen, `entry ${i} name`);
    const name = buf.subarray(pos, pos + nameLen).toString("utf-8"); pos += nameLen;
    if (seen.has(name)) throw new ContainerError(`duplicate entry name ${JSON.stringify(name)}`);
    seen.add(name);
    need(4, `entry ${name} rank`);
    const rank = view.getUint32(pos, true); pos += 4;
    if (rank > 32) throw new ContainerError(`entry ${name}: rank ${rank} too large`);
    const dims: number[] = [];
    for (let k = 0; k < rank; k++) {
      need(8, `entry ${name} dim ${k}`);
      dims.push(Number(view.getBigUint64(pos, true))); pos += 8;
    }
    need(4, `entry ${name} dtype`);
    const dtype = view.getUint32(pos, true); pos += 4;
    if (dtype !== DTYPE_FLOAT32) throw new ContainerError(`entry ${name}: unknown dtype tag ${dtype}`);
    const n = product(dims);
    need(4 * n, `entry ${name} payload`);
    const data = new Float32Array(n);
    for (let k = 0; k < n; k++) {
      data[k] = view.getFloat32(pos, true); pos += 4;
    }
    entries.push({ name, dims, data });
  }
  need(4, "metadata length");
  const metaLen = view.getUint32(pos, true); pos += 4;
  need(metaLen, "metadata");
  const metaBytes = buf.subarray(pos, pos + metaLen); pos += metaLen;
  if (pos !== buf.length) throw new ContainerError(`${buf.length - pos} trailing bytes after metadata`);
  if (metaLen === 0) return { entries, metadata: {} };
  let metadata: unknown;
  try {
    metadata = JSON.parse(metaBytes.toString("utf-8"));
  } catch (exc) {
    throw new ContainerError(`metadata is not valid UTF-8 JSON: ${exc}`);
  }
  if (metadata === null || typeof metadata !== "object" || Array.isArray(metadata)) {
    throw new ContainerError("metadata document must be a JSON object");
  }
  return { entries, metadata: metadata as Record<string, unknown> };
}
