/** Minimal binary PGM (P5) reader for the renderer's splat images. */

import * as fs from "node:fs";

export interface GrayImage {
  width: number;
  height: number;
  /** row-major intensities in [0, 1] */
  pixels: Float64Array;
}

export function readPgm(filePath: string): GrayImage {
  const blob = fs.readFileSync(filePath);
  if (blob.length < 2 || blob[0] !== 0x50 || blob[1] !== 0x35) {
    throw new Error(`${filePath}: not a binary PGM (P5) file`);
  }
  // header tokens: P5, width, height, maxval; '#' comments allowed
  let off = 2;
  const tokens: string[] = [];
  while (tokens.length < 3 && off < blob.length) {
    while (off < blob.length && /\s/.test(String.fromCharCode(blob[off]))) off++;
    if (blob[off] === 0x23) { // comment line
      while (off < blob.length && blob[off] !== 0x0a) off++;
      continue;
    }
    let tok = "";
    while (off < blob.length && !/\s/.test(String.fromCharCode(blob[off]))) {
      tok += String.fromCharCode(blob[off]);
      off++;
    }
    tokens.push(tok);
  }
  off++; // single whitespace after maxval
  const [width, height, maxval] = tokens.map(Number);
  if (!(width > 0) || !(height > 0) || !(maxval > 0) || maxval > 255) {
    throw new Error(`${filePath}: bad PGM header (${tokens.join(" ")})`);
  }
  if (blob.length - off < width * height) {
    throw new Error(`${filePath}: truncated PGM payload`);
  }
  const pixels = new Float64Array(width * height);
  for (let i = 0; i < width * height; i++) {
    pixels[i] = blob[off + i] / maxval;
  }
  return { width, height, pixels };
}
