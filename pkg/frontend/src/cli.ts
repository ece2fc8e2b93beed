#!/usr/bin/env node
/** Command line for the adapters: embedding extraction and benchmark conversion. */

import { readFileSync, realpathSync } from "node:fs";
import { fileURLToPath } from "node:url";

import { parse as parseToml } from "smol-toml";
import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { convertBenchmark } from "./convert.js";
import { resolveEncoder } from "./encoders.js";
import { extractImages, extractTexts } from "./extract.js";

/** Defaults from the shared toolkit config file: the [adapters] table. */
function configDefaults(path?: string): Record<string, unknown> {
  if (!path) return {};
  const doc = parseToml(readFileSync(path, "utf-8")) as Record<string, unknown>;
  const table = doc.adapters;
  return typeof table === "object" && table !== null ? (table as Record<string, unknown>) : {};
}

export async function main(argv: string[]): Promise<number> {
  try {
    const configPath = (() => {
      const index = argv.indexOf("--config");
      return index >= 0 ? argv[index + 1] : undefined;
    })();
    await yargs(argv)
      .scriptName("softcir-adapters")
      .option("config", { type: "string", describe: "Shared TOML config file ([adapters] table sets defaults)" })
      .config(configDefaults(configPath))
      .command(
        "extract",
        "Extract image or caption embeddings into an SFTEMB1 store",
        (y) =>
          y
            .option("images", { type: "string", describe: "Directory of images (ids are file stems)" })
            .option("captions", { type: "string", describe: "Captions JSONL {id, text}" })
            .option("model", {
              type: "string",
              default: "hash:64",
              describe: "Encoder tag: hash:<dim>, vit-b-32 (512) or vit-l-14 (768)",
            })
            .option("endpoint", { type: "string", describe: "Embedding HTTP endpoint for real encoder tags" })
            .option("out", { type: "string", demandOption: true, describe: "Output .sftemb path" })
            .option("batch-size", { type: "number", default: 16 })
            .conflicts("images", "captions")
            .check((args) => {
              if (!args.images && !args.captions) throw new Error("supply --images or --captions");
              return true;
            }),
        async (args) => {
          const encoder = resolveEncoder(args.model, args.endpoint);
          const job = { encoder, outPath: args.out, batchSize: args["batch-size"] };
          const report = args.images
            ? await extractImages(args.images, job)
            : await extractTexts(args.captions as string, job);
          console.error(
            `wrote ${report.written} rows (dim ${encoder.dim}) to ${args.out}; skipped ${report.skipped.length}`,
          );
        },
      )
      .command(
        "convert",
        "Convert benchmark annotation files into dataset JSONL",
        (y) =>
          y
            .option("kind", { choices: ["cirr", "fashioniq"] as const, demandOption: true })
            .option("annotations", { type: "string", demandOption: true })
            .option("category", { type: "string", default: "dress", describe: "FashionIQ category used in synthesized query ids" })
            .option("out", { type: "string", demandOption: true }),
        async (args) => {
          const count = convertBenchmark(args.kind, args.annotations, args.out, args.category);
          console.error(`wrote ${count} query records to ${args.out}`);
        },
      )
      .demandCommand(1)
      .strict()
      .fail((msg, error) => {
        throw error ?? new Error(msg);
      })
      .parseAsync();
    return 0;
  } catch (error) {
    console.error(`error: ${(error as Error).message}`);
    return 1;
  }
}

const entryPath = process.argv[1] ? realpathSync(process.argv[1]) : "";
if (entryPath && entryPath === fileURLToPath(import.meta.url)) {
  main(hideBin(process.argv)).then((code) => process.exit(code));
}
