/**
 * Embedding backends.
 *
 * Model identifiers are configuration: callers ask for e.g. "clip-vit-large"
 * and get whatever implementation this build provides for it. This build
 * ships a deterministic offline backend (pixel/character statistics behind a
 * signed-hash projection); real model runtimes plug in behind the same
 * interface without touching the export pipeline.
 */

import { GrayImage } from "./pgm.js";

export const DEFAULT_EMBEDDER = "clip-vit-large";
export const OFFLINE_BACKEND = "offline-hash-v1";

export interface EmbedBackend {
  /** requested model identifier (recorded in sidecars) */
  model: string;
  /** implementation actually used */
  backend: string;
  dim: number;
  embedImage(img: GrayImage): Float64Array;
  embedText(text: string): Float64Array;
}

/** 32-bit integer mix; deterministic across platforms. */
function mix(...parts: number[]): number {
  let h = 0x9e3779b9 | 0;
  for (const p of parts) {
    h = Math.imul(h ^ (p | 0), 0x85ebca6b);
    h ^= h >>> 13;
    h = Math.imul(h, 0xc2b2ae35);
    h ^= h >>> 16;
  }
  return h >>> 0;
}

/** signed projection entry in {-1, +1} derived from (row, col, salt) */
function sign(row: number, col: number, salt: number): number {
  return mix(row, col, salt) & 1 ? 1.0 : -1.0;
}

function project(features: Float64Array, dim: number, salt: number): Float64Array {
  const out = new Float64Array(dim);
  for (let j = 0; j < dim; j++) {
    let acc = 0;
    for (let i = 0; i < features.length; i++) {
      acc += features[i] * sign(i, j, salt);
    }
    out[j] = acc;
  }
  return out;
}

const GRID = 8;
const TEXT_BUCKETS = 128;

function imageFeatures(img: GrayImage): Float64Array {
  // pooled 8x8 intensity grid plus global statistics
  const feats = new Float64Array(GRID * GRID + 4);
  const cellW = img.width / GRID;
  const cellH = img.height / GRID;
  const counts = new Float64Array(GRID * GRID);
  let mass = 0;
  let cx = 0;
  let cy = 0;
  let covered = 0;
  for (let y = 0; y < img.height; y++) {
    for (let x = 0; x < img.width; x++) {
      const v = img.pixels[y * img.width + x];
      const gx = Math.min(GRID - 1, Math.floor(x / cellW));
      const gy = Math.min(GRID - 1, Math.floor(y / cellH));
      feats[gy * GRID + gx] += v;
      counts[gy * GRID + gx] += 1;
      mass += v;
      cx += v * x;
      cy += v * y;
      if (v > 0) covered += 1;
    }
  }
  for (let i = 0; i < GRID * GRID; i++) {
    feats[i] = counts[i] ? feats[i] / counts[i] : 0;
  }
  const n = img.width * img.height;
  feats[GRID * GRID] = mass / n;
  feats[GRID * GRID + 1] = covered / n;
  feats[GRID * GRID + 2] = mass > 0 ? cx / (mass * img.width) : 0.5;
  feats[GRID * GRID + 3] = mass > 0 ? cy / (mass * img.height) : 0.5;
  return feats;
}

function textFeatures(text: string): Float64Array {
  const feats = new Float64Array(TEXT_BUCKETS + 1);
  const s = text.toLowerCase();
  for (let i = 0; i + 2 < s.length; i++) {
    const tri = mix(s.charCodeAt(i), s.charCodeAt(i + 1), s.charCodeAt(i + 2));
    feats[tri % TEXT_BUCKETS] += 1;
  }
  feats[TEXT_BUCKETS] = Math.log(1 + s.length);
  return feats;
}

export function resolveEmbedder(model: string = DEFAULT_EMBEDDER,
                                dim: number = 64): EmbedBackend {
  if (dim < 1) throw new Error(`embedding dim must be >= 1, got ${dim}`);
  const imageSalt = mix(7, dim);
  const textSalt = mix(13, dim);
  return {
    model,
    backend: OFFLINE_BACKEND,
    dim,
    embedImage: (img) => project(imageFeatures(img), dim, imageSalt),
    embedText: (text) => project(textFeatures(text), dim, textSalt),
  };
}

export interface NormalizedRow {
  row: Float32Array;
  preNorm: number;
}

/** L2-normalize (float64 math) and round once to float32. */
export function normalize(v: Float64Array): NormalizedRow {
  let sq = 0;
  for (let i = 0; i < v.length; i++) sq += v[i] * v[i];
  const norm = Math.sqrt(sq);
  if (norm < 1e-12) {
    throw new Error("cannot normalize a near-zero embedding");
  }
  const row = new Float32Array(v.length);
  for (let i = 0; i < v.length; i++) row[i] = Math.fround(v[i] / norm);
  return { row, preNorm: norm };
}

/** cosine of two already-normalized float32 rows, accumulated in float64 */
export function cosine(a: Float32Array, b: Float32Array): number {
  if (a.length !== b.length) {
    throw new Error(`cosine: dim mismatch ${a.length} vs ${b.length}`);
  }
  let acc = 0;
  for (let i = 0; i < a.length; i++) acc += a[i] * b[i];
  return acc;
}
