/**
 * Extraction jobs: a directory of images (or a captions JSONL) in, one
 * SFTEMB1 store out, one unit-normalized row per input, rows ordered by
 * sorted id. Undecodable images are logged, skipped, and recorded in the
 * extraction manifest; re-running a job overwrites byte-identically.
 */

import { readFileSync, readdirSync, statSync, writeFileSync, renameSync } from "node:fs";
import { basename, extname, join } from "node:path";

import { Encoder } from "./encoders.js";
import { DecodeError, SchemaViolation } from "./errors.js";
import { readJsonl } from "./jsonl.js";
import { EmbeddingStore, writeStore } from "./sftemb.js";

export interface ExtractionJob {
  encoder: Encoder;
  outPath: string;
  batchSize: number;
}

export interface ExtractionReport {
  written: number;
  skipped: Array<{ id: string; reason: string }>;
}

const IMAGE_EXTENSIONS = new Set([".png", ".jpg", ".jpeg", ".webp", ".gif"]);

const MAGIC_SNIFFS: Array<{ name: string; test: (b: Buffer) => boolean }> = [
  { name: "png", test: (b) => b.length >= 8 && b.subarray(0, 8).equals(Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a])) },
  { name: "jpeg", test: (b) => b.length >= 3 && b[0] === 0xff && b[1] === 0xd8 && b[2] === 0xff },
  { name: "webp", test: (b) => b.length >= 12 && b.toString("ascii", 0, 4) === "RIFF" && b.toString("ascii", 8, 12) === "WEBP" },
  { name: "gif", test: (b) => b.length >= 6 && ["GIF87a", "GIF89a"].includes(b.toString("ascii", 0, 6)) },
];

export function sniffImage(bytes: Buffer): string {
  for (const { name, test } of MAGIC_SNIFFS) {
    if (test(bytes)) return name;
  }
  throw new DecodeError("not a recognizable PNG/JPEG/WebP/GIF payload");
}

async function encodeRows(
  entries: Array<{ id: string; value: Buffer | string }>,
  job: ExtractionJob,
): Promise<EmbeddingStore> {
  const { encoder, batchSize } = job;
  const dim = encoder.dim;
  const data = new Float32Array(entries.length * dim);
  for (let start = 0; start < entries.length; start += batchSize) {
    const batch = entries.slice(start, start + batchSize);
    const vectors = await Promise.all(
      batch.map(({ value }) =>
        typeof value === "string" ? encoder.embedText(value) : encoder.embedImage(value),
      ),
    );
    vectors.forEach((vector, offset) => {
      data.set(Float32Array.from(vector), (start + offset) * dim);
    });
  }
  return { ids: entries.map((e) => e.id), dim, data, normalized: true };
}

function writeManifest(job: ExtractionJob, report: ExtractionReport, source: string): void {
  const manifest = {
    model: job.encoder.tag,
    dim: job.encoder.dim,
    source,
    rows: report.written,
    skipped: report.skipped,
  };
  const path = `${job.outPath}.manifest.json`;
  const tmp = `${path}.tmp`;
  writeFileSync(tmp, JSON.stringify(manifest, null, 2) + "\n", "utf-8");
  renameSync(tmp, path);
}

export async function extractImages(imagesDir: string, job: ExtractionJob): Promise<ExtractionReport> {
  const files = readdirSync(imagesDir)
    .filter((name) => IMAGE_EXTENSIONS.has(extname(name).toLowerCase()))
    .filter((name) => statSync(join(imagesDir, name)).isFile());

  const byId = new Map<string, string>();
  for (const name of files) {
    const id = basename(name, extname(name));
    const clash = byId.get(id);
    if (clash !== undefined) {
      throw new SchemaViolation(`id ${JSON.stringify(id)} appears twice (${clash}, ${name})`);
    }
    byId.set(id, name);
  }

  const skipped: Array<{ id: string; reason: string }> = [];
  const entries: Array<{ id: string; value: Buffer }> = [];
  for (const id of [...byId.keys()].sort()) {
    const path = join(imagesDir, byId.get(id)!);
    const bytes = readFileSync(path);
    try {
      sniffImage(bytes);
    } catch (error) {
      if (error instanceof DecodeError) {
        console.error(`skipping ${path}: ${error.message}`);
        skipped.push({ id, reason: error.message });
        continue;
      }
      throw error;
    }
    entries.push({ id, value: bytes });
  }
  if (!entries.length) {
    throw new SchemaViolation(`no decodable images under ${imagesDir}; nothing written`);
  }

  writeStore(job.outPath, await encodeRows(entries, job));
  const report = { written: entries.length, skipped };
  writeManifest(job, report, imagesDir);
  return report;
}

export async function extractTexts(captionsPath: string, job: ExtractionJob): Promise<ExtractionReport> {
  const rows = readJsonl(captionsPath);
  const byId = new Map<string, string>();
  for (const { lineno, obj } of rows) {
    const id = obj.id;
    const text = obj.text;
    if (typeof id !== "string" || !id) {
      throw new SchemaViolation(`${captionsPath}:${lineno}: rows need a non-empty string 'id'`);
    }
    if (typeof text !== "string" || !text) {
      throw new SchemaViolation(`${captionsPath}:${lineno}: rows need a non-empty string 'text'`);
    }
    if (byId.has(id)) {
      throw new SchemaViolation(`${captionsPath}:${lineno}: duplicate id ${JSON.stringify(id)}`);
    }
    byId.set(id, text);
  }
  if (!byId.size) {
    throw new SchemaViolation(`${captionsPath}: no caption rows; nothing written`);
  }
  const entries = [...byId.keys()].sort().map((id) => ({ id, value: byId.get(id)! }));
  writeStore(job.outPath, await encodeRows(entries, job));
  const report = { written: entries.length, skipped: [] };
  writeManifest(job, report, captionsPath);
  return report;
}
