/**
 * Encoder registry. Two families:
 *
 *  - "hash:<dim>"  deterministic pseudo-embeddings derived from content
 *    bytes; no semantics, but stable across runs and machines, which is
 *    what offline tests and synthetic corpora need.
 *  - "vit-b-32" / "vit-l-14"  real encoder tags with fixed output widths,
 *    served by an external embedding endpoint (--endpoint). Without an
 *    endpoint these fail fast with ModelLoadError: encoder weights are not
 *    bundled with the adapter.
 */

import { ModelLoadError } from "./errors.js";

export interface Encoder {
  readonly tag: string;
  readonly dim: number;
  embedImage(bytes: Buffer): Promise<Float64Array>;
  embedText(text: string): Promise<Float64Array>;
}

export const MODEL_DIMS: Record<string, number> = {
  "vit-b-32": 512,
  "vit-l-14": 768,
};

const MASK64 = (1n << 64n) - 1n;

function fnv1a64(bytes: Buffer): bigint {
  let hash = 0xcbf29ce484222325n;
  for (const byte of bytes) {
    hash ^= BigInt(byte);
    hash = (hash * 0x100000001b3n) & MASK64;
  }
  return hash;
}

class SplitMix64 {
  private state: bigint;

  constructor(seed: bigint) {
    this.state = seed & MASK64;
  }

  next(): bigint {
    this.state = (this.state + 0x9e3779b97f4a7c15n) & MASK64;
    let z = this.state;
    z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK64;
    z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & MASK64;
    return z ^ (z >> 31n);
  }
}

export function unitNormalize(values: Float64Array): Float64Array {
  let sumSquares = 0;
  for (const v of values) sumSquares += v * v;
  const norm = Math.sqrt(sumSquares);
  if (norm === 0) throw new ModelLoadError("encoder produced a zero vector");
  for (let i = 0; i < values.length; i++) values[i] /= norm;
  return values;
}

export class HashEncoder implements Encoder {
  readonly tag: string;

  constructor(readonly dim: number) {
    if (!Number.isInteger(dim) || dim < 1) {
      throw new ModelLoadError(`hash encoder needs a positive integer dim, got ${dim}`);
    }
    this.tag = `hash:${dim}`;
  }

  private fromBytes(bytes: Buffer): Float64Array {
    const rng = new SplitMix64(fnv1a64(bytes));
    const values = new Float64Array(this.dim);
    for (let i = 0; i < this.dim; i++) {
      values[i] = Number(rng.next()) / 2 ** 63 - 1.0;
    }
    return unitNormalize(values);
  }

  async embedImage(bytes: Buffer): Promise<Float64Array> {
    return this.fromBytes(bytes);
  }

  async embedText(text: string): Promise<Float64Array> {
    return this.fromBytes(Buffer.from(text, "utf-8"));
  }
}

/** Bridges a real encoder served over HTTP (POST /embed_image, /embed_text). */
export class EndpointEncoder implements Encoder {
  constructor(
    readonly tag: string,
    readonly dim: number,
    private readonly baseUrl: string,
  ) {}

  private async call(path: string, body: object): Promise<Float64Array> {
    const response = await fetch(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!response.ok) {
      throw new ModelLoadError(`embedding endpoint returned HTTP ${response.status}`);
    }
    const doc = (await response.json()) as { embedding?: number[] };
    if (!Array.isArray(doc.embedding)) {
      throw new ModelLoadError("embedding endpoint response lacks an 'embedding' array");
    }
    if (doc.embedding.length !== this.dim) {
      throw new ModelLoadError(
        `model ${this.tag} declares dim ${this.dim}, endpoint returned ${doc.embedding.length}`,
      );
    }
    return unitNormalize(Float64Array.from(doc.embedding));
  }

  embedImage(bytes: Buffer): Promise<Float64Array> {
    return this.call("/embed_image", { model: this.tag, image_b64: bytes.toString("base64") });
  }

  embedText(text: string): Promise<Float64Array> {
    return this.call("/embed_text", { model: this.tag, text });
  }
}

export function resolveEncoder(model: string, endpoint?: string): Encoder {
  if (model.startsWith("hash:")) {
    return new HashEncoder(Number(model.slice("hash:".length)));
  }
  const dim = MODEL_DIMS[model];
  if (dim === undefined) {
    throw new ModelLoadError(
      `unknown model tag ${JSON.stringify(model)}; known: hash:<dim>, ${Object.keys(MODEL_DIMS).join(", ")}`,
    );
  }
  if (!endpoint) {
    throw new ModelLoadError(
      `model ${model} needs --endpoint <url>; encoder weights are not bundled with this adapter`,
    );
  }
  return new EndpointEncoder(model, dim, endpoint.replace(/\/$/, ""));
}
