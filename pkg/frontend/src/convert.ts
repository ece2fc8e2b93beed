/**
 * Benchmark annotation converters: published CIRR / FashionIQ JSON shapes
 * in, softcir dataset JSONL out ({query_id, reference_id, mod_texts,
 * gt_ids, subset_ids?} per line).
 */

import { readFileSync } from "node:fs";

import { SchemaViolation } from "./errors.js";
import { writeJsonl } from "./jsonl.js";

export interface DatasetRow {
  query_id: string;
  reference_id: string;
  mod_texts: string[];
  gt_ids: string[];
  subset_ids?: string[];
}

function loadAnnotationArray(path: string): unknown[] {
  let parsed: unknown;
  try {
    parsed = JSON.parse(readFileSync(path, "utf-8"));
  } catch (error) {
    throw new SchemaViolation(`${path}: invalid JSON: ${(error as Error).message}`);
  }
  if (!Array.isArray(parsed)) {
    throw new SchemaViolation(`${path}: expected a top-level JSON array of annotations`);
  }
  return parsed;
}

function requireString(path: string, index: number, record: Record<string, unknown>, key: string): string {
  const value = record[key];
  if (typeof value === "number") return String(value);
  if (typeof value !== "string" || !value) {
    throw new SchemaViolation(`${path}[${index}]: missing or empty field ${JSON.stringify(key)}`);
  }
  return value;
}

/** CIRR: {pairid, reference, target_hard, caption, img_set:{members:[6]}}. */
export function convertCirr(annotationsPath: string): DatasetRow[] {
  const rows: DatasetRow[] = [];
  loadAnnotationArray(annotationsPath).forEach((item, index) => {
    if (typeof item !== "object" || item === null) {
      throw new SchemaViolation(`${annotationsPath}[${index}]: expected an object`);
    }
    const record = item as Record<string, unknown>;
    const target = requireString(annotationsPath, index, record, "target_hard");
    const imgSet = record.img_set;
    if (typeof imgSet !== "object" || imgSet === null) {
      throw new SchemaViolation(`${annotationsPath}[${index}]: missing img_set`);
    }
    const members = (imgSet as Record<string, unknown>).members;
    if (!Array.isArray(members) || !members.every((m) => typeof m === "string")) {
      throw new SchemaViolation(`${annotationsPath}[${index}]: img_set.members must be a string array`);
    }
    if (!members.includes(target)) {
      throw new SchemaViolation(
        `${annotationsPath}[${index}]: target ${JSON.stringify(target)} not in its img_set`,
      );
    }
    rows.push({
      query_id: requireString(annotationsPath, index, record, "pairid"),
      reference_id: requireString(annotationsPath, index, record, "reference"),
      mod_texts: [requireString(annotationsPath, index, record, "caption")],
      gt_ids: [target],
      subset_ids: members as string[],
    });
  });
  if (!rows.length) throw new SchemaViolation(`${annotationsPath}: no annotations`);
  return rows;
}

/** FashionIQ: {target, candidate, captions:[2]}; query ids are synthesized
 * as "<category>-<index>" because the records carry none of their own. */
export function convertFashionIq(annotationsPath: string, category: string): DatasetRow[] {
  const rows: DatasetRow[] = [];
  loadAnnotationArray(annotationsPath).forEach((item, index) => {
    if (typeof item !== "object" || item === null) {
      throw new SchemaViolation(`${annotationsPath}[${index}]: expected an object`);
    }
    const record = item as Record<string, unknown>;
    const captions = record.captions;
    if (!Array.isArray(captions) || captions.length !== 2 || !captions.every((c) => typeof c === "string" && c)) {
      throw new SchemaViolation(`${annotationsPath}[${index}]: captions must be exactly 2 non-empty strings`);
    }
    rows.push({
      query_id: `${category}-${index}`,
      reference_id: requireString(annotationsPath, index, record, "candidate"),
      mod_texts: captions as string[],
      gt_ids: [requireString(annotationsPath, index, record, "target")],
    });
  });
  if (!rows.length) throw new SchemaViolation(`${annotationsPath}: no annotations`);
  return rows;
}

export function convertBenchmark(
  kind: "cirr" | "fashioniq",
  annotationsPath: string,
  outPath: string,
  category = "dress",
): number {
  const rows = kind === "cirr" ? convertCirr(annotationsPath) : convertFashionIq(annotationsPath, category);
  writeJsonl(outPath, rows);
  return rows.length;
}
