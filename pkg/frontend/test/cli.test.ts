import { writeFileSync } from "node:fs";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

import { main } from "../src/cli.js";
import { readStore } from "../src/sftemb.js";
import { tempDir, tinyPng } from "./helpers.js";

describe("adapter cli", () => {
  it("extracts with flags and exits zero", async () => {
    const dir = tempDir("cli-");
    writeFileSync(join(dir, "one.png"), tinyPng([1, 2, 3]));
    const out = join(dir, "s.sftemb");
    const code = await main(["extract", "--images", dir, "--model", "hash:12", "--out", out]);
    expect(code).toBe(0);
    expect(readStore(out).dim).toBe(12);
  });

  it("takes defaults from the [adapters] config table, flags win", async () => {
    const dir = tempDir("cli-");
    writeFileSync(join(dir, "one.png"), tinyPng([7, 7, 7]));
    const config = join(dir, "softcir.toml");
    writeFileSync(config, '[adapters]\nmodel = "hash:24"\n');

    const fromConfig = join(dir, "a.sftemb");
    expect(await main(["--config", config, "extract", "--images", dir, "--out", fromConfig])).toBe(0);
    expect(readStore(fromConfig).dim).toBe(24);

    const fromFlag = join(dir, "b.sftemb");
    expect(
      await main(["--config", config, "extract", "--images", dir, "--model", "hash:6", "--out", fromFlag]),
    ).toBe(0);
    expect(readStore(fromFlag).dim).toBe(6);
  });

  it("maps failures to exit code 1", async () => {
    const dir = tempDir("cli-");
    const code = await main(["extract", "--images", dir, "--out", join(dir, "s.sftemb")]);
    expect(code).toBe(1);
  });

  it("converts benchmarks end to end", async () => {
    const dir = tempDir("cli-");
    const annotations = join(dir, "cap.dress.val.json");
    writeFileSync(
      annotations,
      JSON.stringify([{ target: "t0", candidate: "c0", captions: ["is red", "is long"] }]),
    );
    const out = join(dir, "dataset.jsonl");
    const code = await main([
      "convert", "--kind", "fashioniq", "--annotations", annotations, "--category", "dress", "--out", out,
    ]);
    expect(code).toBe(0);
  });
});
