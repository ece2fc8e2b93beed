import { readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

import { convertBenchmark, convertCirr, convertFashionIq } from "../src/convert.js";
import { SchemaViolation } from "../src/errors.js";
import { tempDir } from "./helpers.js";

function cirrRecord(overrides: object = {}) {
  return {
    pairid: 4821,
    reference: "dev-220-0-img0",
    target_hard: "dev-220-1-img1",
    caption: "make the dog face the camera",
    img_set: {
      id: 220,
      members: [
        "dev-220-0-img0",
        "dev-220-1-img1",
        "dev-220-2-img0",
        "dev-220-3-img1",
        "dev-221-0-img0",
        "dev-221-1-img1",
      ],
    },
    ...overrides,
  };
}

describe("convertCirr", () => {
  it("passes the 6-image subset through", () => {
    const dir = tempDir("cirr-");
    const path = join(dir, "cap.rc2.val.json");
    writeFileSync(path, JSON.stringify([cirrRecord()]));
    const rows = convertCirr(path);
    expect(rows).toHaveLength(1);
    expect(rows[0].query_id).toBe("4821");
    expect(rows[0].reference_id).toBe("dev-220-0-img0");
    expect(rows[0].mod_texts).toEqual(["make the dog face the camera"]);
    expect(rows[0].gt_ids).toEqual(["dev-220-1-img1"]);
    expect(rows[0].subset_ids).toHaveLength(6);
  });

  it("rejects a missing target field", () => {
    const dir = tempDir("cirr-");
    const path = join(dir, "bad.json");
    const record: any = cirrRecord();
    delete record.target_hard;
    writeFileSync(path, JSON.stringify([record]));
    expect(() => convertCirr(path)).toThrow(SchemaViolation);
    expect(() => convertCirr(path)).toThrow(/\[0\].*target_hard/);
  });

  it("rejects a subset that excludes its target", () => {
    const dir = tempDir("cirr-");
    const path = join(dir, "bad.json");
    writeFileSync(path, JSON.stringify([cirrRecord({ target_hard: "not-in-set" })]));
    expect(() => convertCirr(path)).toThrow(/not in its img_set/);
  });
});

describe("convertFashionIq", () => {
  it("emits both captions", () => {
    const dir = tempDir("fiq-");
    const path = join(dir, "cap.dress.val.json");
    writeFileSync(
      path,
      JSON.stringify([
        { target: "B00A", candidate: "B00B", captions: ["is darker", "has sleeves"] },
      ]),
    );
    const rows = convertFashionIq(path, "dress");
    expect(rows[0].mod_texts).toHaveLength(2);
    expect(rows[0].query_id).toBe("dress-0");
    expect(rows[0].reference_id).toBe("B00B");
    expect(rows[0].gt_ids).toEqual(["B00A"]);
    expect(rows[0].subset_ids).toBeUndefined();
  });

  it("rejects records without exactly two captions", () => {
    const dir = tempDir("fiq-");
    const path = join(dir, "bad.json");
    writeFileSync(path, JSON.stringify([{ target: "t", candidate: "c", captions: ["only one"] }]));
    expect(() => convertFashionIq(path, "shirt")).toThrow(SchemaViolation);
  });

  it("rejects a missing target with index context", () => {
    const dir = tempDir("fiq-");
    const path = join(dir, "bad.json");
    writeFileSync(path, JSON.stringify([{ candidate: "c", captions: ["a", "b"] }]));
    expect(() => convertFashionIq(path, "toptee")).toThrow(/\[0\].*target/);
  });
});

describe("convertBenchmark", () => {
  it("writes dataset JSONL the primary toolkit accepts", () => {
    const dir = tempDir("conv-");
    const annotations = join(dir, "cap.rc2.val.json");
    writeFileSync(annotations, JSON.stringify([cirrRecord(), cirrRecord({ pairid: 4822 })]));
    const out = join(dir, "dataset.jsonl");
    expect(convertBenchmark("cirr", annotations, out)).toBe(2);
    const lines = readFileSync(out, "utf-8").trim().split("\n");
    expect(lines).toHaveLength(2);
    const first = JSON.parse(lines[0]);
    expect(Object.keys(first)).toEqual([
      "query_id",
      "reference_id",
      "mod_texts",
      "gt_ids",
      "subset_ids",
    ]);
  });
});
