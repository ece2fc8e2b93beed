/**
 * SFTEMB1 binary embedding store, byte-compatible with the softcir toolkit.
 *
 * Layout (little-endian):
 *   bytes 0-7    magic ASCII "SFTEMB1\0"
 *   bytes 8-11   u32 row count
 *   bytes 12-15  u32 dim
 *   byte  16     dtype code (0x01 = float32)
 *   byte  17     flags (bit0 = normalized)
 *   bytes 18+    row-major float32 payload
 * Sidecar "<stem>.ids.json" holds a JSON array of row ids.
 */

import { readFileSync, renameSync, writeFileSync } from "node:fs";
import { basename, dirname, extname, join } from "node:path";

import { FormatError } from "./errors.js";

export const MAGIC = "SFTEMB1\0";
export const DTYPE_FLOAT32 = 0x01;
export const FLAG_NORMALIZED = 0x01;
const HEADER_BYTES = 18;

export interface EmbeddingStore {
  ids: string[];
  dim: number;
  /** Row-major, ids.length * dim values. */
  data: Float32Array;
  normalized: boolean;
}

export function idsSidecarPath(storePath: string): string {
  const stem = basename(storePath, extname(storePath));
  return join(dirname(storePath), `${stem}.ids.json`);
}

export function writeStore(path: string, store: EmbeddingStore): void {
  const { ids, dim, data, normalized } = store;
  if (data.length !== ids.length * dim) {
    throw new FormatError(
      `payload holds ${data.length} values, expected ${ids.length} x ${dim}`,
    );
  }
  const buffer = Buffer.alloc(HEADER_BYTES + data.length * 4);
  buffer.write(MAGIC, 0, "ascii");
  buffer.writeUInt32LE(ids.length, 8);
  buffer.writeUInt32LE(dim, 12);
  buffer.writeUInt8(DTYPE_FLOAT32, 16);
  buffer.writeUInt8(normalized ? FLAG_NORMALIZED : 0, 17);
  for (let i = 0; i < data.length; i++) {
    buffer.writeFloatLE(data[i], HEADER_BYTES + i * 4);
  }
  const tmp = `${path}.tmp`;
  writeFileSync(tmp, buffer);
  renameSync(tmp, path);

  const sidecar = idsSidecarPath(path);
  const sidecarTmp = `${sidecar}.tmp`;
  writeFileSync(sidecarTmp, JSON.stringify(ids), "utf-8");
  renameSync(sidecarTmp, sidecar);
}

export function readStore(path: string): EmbeddingStore {
  const blob = readFileSync(path);
  if (blob.length < HEADER_BYTES) {
    throw new FormatError(`${path}: shorter than the fixed header`);
  }
  if (blob.toString("ascii", 0, 8) !== MAGIC) {
    throw new FormatError(`${path}: bad magic`);
  }
  const count = blob.readUInt32LE(8);
  const dim = blob.readUInt32LE(12);
  if (blob.readUInt8(16) !== DTYPE_FLOAT32) {
    throw new FormatError(`${path}: unsupported dtype code`);
  }
  const flags = blob.readUInt8(17);
  if (blob.length !== HEADER_BYTES + count * dim * 4) {
    throw new FormatError(`${path}: payload size disagrees with header`);
  }
  const data = new Float32Array(count * dim);
  for (let i = 0; i < data.length; i++) {
    data[i] = blob.readFloatLE(HEADER_BYTES + i * 4);
  }
  const ids = JSON.parse(readFileSync(idsSidecarPath(path), "utf-8"));
  if (!Array.isArray(ids) || ids.length !== count) {
    throw new FormatError(`${path}: ids sidecar disagrees with header`);
  }
  return { ids, dim, data, normalized: (flags & FLAG_NORMALIZED) !== 0 };
}

export function row(store: EmbeddingStore, index: number): Float32Array {
  return store.data.subarray(index * store.dim, (index + 1) * store.dim);
}

export function dot(a: Float32Array, b: Float32Array): number {
  let total = 0;
  for (let i = 0; i < a.length; i++) total += a[i] * b[i];
  return total;
}
