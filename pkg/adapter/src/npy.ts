/**
 * Minimal NPY v1.0 reader/writer for the editor exchange format.
 *
 * The byte-level contract is shared with the reconstruction toolkit on the
 * other side of the protocol: magic \x93NUMPY, version (1, 0), little-endian
 * uint16 header length, header padded with spaces to a 64-byte-aligned total
 * and terminated by a newline. Scope is narrow on purpose: C-order 2D arrays,
 * float32 or float64. Writes go through a temp file and an atomic rename.
 */

import { randomBytes } from "node:crypto";
import * as fs from "node:fs";
import * as path from "node:path";

const MAGIC = Buffer.from("\x93NUMPY", "latin1");
const ALIGN = 64;

export class NpyError extends Error {}

export interface FloatImage {
  data: Float64Array; // row-major, h * w
  height: number;
  width: number;
}

function buildHeader(descr: string, height: number, width: number): Buffer {
  const body = `{'descr': '${descr}', 'fortran_order': False, 'shape': (${height}, ${width}), }`;
  const prefixLen = MAGIC.length + 2 + 2;
  const total = prefixLen + body.length + 1; // final newline
  const pad = ((-total % ALIGN) + ALIGN) % ALIGN;
  const header = body + " ".repeat(pad) + "\n";
  const out = Buffer.alloc(prefixLen + header.length);
  MAGIC.copy(out, 0);
  out[6] = 1; // version major
  out[7] = 0; // version minor
  out.writeUInt16LE(header.length, 8);
  out.write(header, 10, "latin1");
  return out;
}

/** Write a 2D image as float32 NPY v1.0, atomically. */
export function npyWriteFloat32(filePath: string, image: FloatImage): void {
  const { data, height, width } = image;
  if (data.length !== height * width) {
    throw new NpyError(
      `image buffer has ${data.length} values for shape (${height}, ${width})`,
    );
  }
  const header = buildHeader("<f4", height, width);
  const payload = Buffer.alloc(4 * data.length);
  for (let i = 0; i < data.length; i++) {
    payload.writeFloatLE(Math.fround(data[i]), 4 * i);
  }
  const tmp = path.join(
    path.dirname(filePath),
    `.${path.basename(filePath)}.${randomBytes(6).toString("hex")}.tmp`,
  );
  fs.writeFileSync(tmp, Buffer.concat([header, payload]));
  try {
    fs.renameSync(tmp, filePath);
  } catch (err) {
    fs.rmSync(tmp, { force: true });
    throw err;
  }
}

function headerField(header: string, pattern: RegExp, what: string): string {
  const match = header.match(pattern);
  if (!match) {
    throw new NpyError(`malformed header, cannot find ${what}: ${header.trim()}`);
  }
  return match[1];
}

/** Read a 2D float32/float64 NPY v1.0 file into double precision. */
export function npyReadImage(filePath: string): FloatImage {
  const buf = fs.readFileSync(filePath);
  if (buf.length < 10 || !buf.subarray(0, 6).equals(MAGIC)) {
    throw new NpyError(`not an NPY file: ${filePath}`);
  }
  if (buf[6] !== 1 || buf[7] !== 0) {
    throw new NpyError(`unsupported NPY version ${buf[6]}.${buf[7]}`);
  }
  const headerLen = buf.readUInt16LE(8);
  if (buf.length < 10 + headerLen) {
    throw new NpyError("truncated file: header ends early");
  }
  const header = buf.subarray(10, 10 + headerLen).toString("latin1");

  const descr = headerField(header, /'descr'\s*:\s*'([^']+)'/, "descr");
  if (descr !== "<f4" && descr !== "<f8") {
    throw new NpyError(`unsupported dtype ${descr}; the protocol uses <f4`);
  }
  const order = headerField(header, /'fortran_order'\s*:\s*(True|False)/, "fortran_order");
  if (order === "True") {
    throw new NpyError("fortran order unsupported");
  }
  const shapeText = headerField(header, /'shape'\s*:\s*\(([^)]*)\)/, "shape");
  const dims = shapeText
    .split(",")
    .map((part) => part.trim())
    .filter((part) => part.length > 0)
    .map((part) => Number.parseInt(part, 10));
  if (dims.length !== 2 || dims.some((n) => !Number.isInteger(n) || n < 0)) {
    throw new NpyError(`need a 2D shape, got (${shapeText})`);
  }
  const [height, width] = dims;

  const itemSize = descr === "<f4" ? 4 : 8;
  const expected = height * width * itemSize;
  const payload = buf.subarray(10 + headerLen);
  if (payload.length < expected) {
    throw new NpyError(
      `truncated file: expected ${expected} payload bytes, got ${payload.length}`,
    );
  }
  if (payload.length > expected) {
    throw new NpyError("trailing bytes after array payload");
  }
  const data = new Float64Array(height * width);
  for (let i = 0; i < data.length; i++) {
    data[i] =
      descr === "<f4" ? payload.readFloatLE(4 * i) : payload.readDoubleLE(8 * i);
  }
  return { data, height, width };
}
