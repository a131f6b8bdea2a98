/**
 * ULP2 embedding-table binary format.
 *
 * Layout (little-endian): magic "ULP2", u32 version=1, u32 dim, u32 count,
 * then count*dim float32 values row-major. Every row must be unit-norm
 * within 1e-3; files are written atomically (temp file + rename).
 */

import * as fs from "node:fs";
import * as path from "node:path";

const MAGIC = Buffer.from("ULP2", "ascii");
export const NORM_TOL = 1e-3;

export interface Table {
  dim: number;
  rows: Float32Array[];
}

export function rowNorm(row: Float32Array | Float64Array): number {
  let sq = 0;
  for (let i = 0; i < row.length; i++) sq += row[i] * row[i];
  return Math.sqrt(sq);
}

function validateRows(rows: Float32Array[], dim: number): void {
  if (rows.length < 1 || dim < 1) {
    throw new Error(`table must have >= 1 row and dim >= 1, got ${rows.length}x${dim}`);
  }
  rows.forEach((row, i) => {
    if (row.length !== dim) {
      throw new Error(`row ${i} has dim ${row.length}, expected ${dim}`);
    }
    const norm = rowNorm(row);
    if (Math.abs(norm - 1.0) > NORM_TOL) {
      throw new Error(`row ${i} has norm ${norm.toFixed(6)}, expected 1 +/- ${NORM_TOL}`);
    }
  });
}

export function atomicWrite(filePath: string, data: Buffer | string): void {
  const tmp = path.join(
    path.dirname(filePath),
    `.${path.basename(filePath)}.tmp-${process.pid}`,
  );
  fs.writeFileSync(tmp, data);
  fs.renameSync(tmp, filePath);
}

export function writeTable(filePath: string, rows: Float32Array[], dim: number): void {
  validateRows(rows, dim);
  const header = Buffer.alloc(16);
  MAGIC.copy(header, 0);
  header.writeUInt32LE(1, 4);
  header.writeUInt32LE(dim, 8);
  header.writeUInt32LE(rows.length, 12);
  const payload = Buffer.alloc(4 * dim * rows.length);
  rows.forEach((row, r) => {
    for (let i = 0; i < dim; i++) {
      payload.writeFloatLE(row[i], 4 * (r * dim + i));
    }
  });
  atomicWrite(filePath, Buffer.concat([header, payload]));
}

export function readTable(filePath: string): Table {
  const blob = fs.readFileSync(filePath);
  if (blob.length < 16 || !blob.subarray(0, 4).equals(MAGIC)) {
    throw new Error(`${filePath}: not a ULP2 table`);
  }
  const version = blob.readUInt32LE(4);
  if (version !== 1) throw new Error(`${filePath}: unsupported version ${version}`);
  const dim = blob.readUInt32LE(8);
  const count = blob.readUInt32LE(12);
  if (blob.length !== 16 + 4 * dim * count) {
    throw new Error(`${filePath}: payload length mismatch`);
  }
  const rows: Float32Array[] = [];
  for (let r = 0; r < count; r++) {
    const row = new Float32Array(dim);
    for (let i = 0; i < dim; i++) {
      row[i] = blob.readFloatLE(16 + 4 * (r * dim + i));
    }
    rows.push(row);
  }
  validateRows(rows, dim);
  return { dim, rows };
}
