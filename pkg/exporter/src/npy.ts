/**
 * NPY v1.0 container, restricted to the interchange subset the tracker reads:
 * little-endian float32, C order, rank 3 [layers, features, frames].
 *
 * Written by hand so the emitted bytes are fully under our control and
 * byte-identical across re-exports.
 */

const MAGIC = Buffer.from("\x93NUMPY", "latin1");

export interface Rank3 {
  shape: [number, number, number];
  /** C-order values, length = shape[0] * shape[1] * shape[2]. */
  data: Float32Array;
}

export function encodeNpy(tensor: Rank3): Buffer {
  const [n, f, t] = tensor.shape;
  if (n < 1 || f < 1 || t < 1) {
    throw new Error(`tensor axes must be non-empty, got [${tensor.shape}]`);
  }
  if (tensor.data.length !== n * f * t) {
    throw new Error(
      `data length ${tensor.data.length} does not match shape [${tensor.shape}]`,
    );
  }
  const header = `{'descr': '<f4', 'fortran_order': False, 'shape': (${n}, ${f}, ${t}), }`;
  const base = MAGIC.length + 2 + 2;
  const pad = 64 - ((base + header.length + 1) % 64);
  const headerText = header + " ".repeat(pad) + "\n";
  const head = Buffer.alloc(base);
  MAGIC.copy(head, 0);
  head[6] = 1; // format version 1.0
  head[7] = 0;
  head.writeUInt16LE(headerText.length, 8);
  // force little-endian payload regardless of platform
  const payload = Buffer.alloc(tensor.data.length * 4);
  for (let i = 0; i < tensor.data.length; i++) {
    payload.writeFloatLE(tensor.data[i], i * 4);
  }
  return Buffer.concat([head, Buffer.from(headerText, "latin1"), payload]);
}

export function decodeNpy(raw: Buffer): Rank3 {
  if (raw.length < 10 || !raw.subarray(0, 6).equals(MAGIC)) {
    throw new Error("not an NPY container");
  }
  if (raw[6] !== 1 || raw[7] !== 0) {
    throw new Error(`unsupported NPY version ${raw[6]}.${raw[7]}`);
  }
  const headerLen = raw.readUInt16LE(8);
  const headerEnd = 10 + headerLen;
  if (raw.length < headerEnd) {
    throw new Error("NPY header truncated");
  }
  const header = raw.subarray(10, headerEnd).toString("latin1");
  if (!header.includes("'descr': '<f4'")) {
    throw new Error("only little-endian float32 supported");
  }
  if (!header.includes("'fortran_order': False")) {
    throw new Error("only C-order supported");
  }
  const shapeMatch = header.match(/'shape':\s*\(([^)]*)\)/);
  if (!shapeMatch) {
    throw new Error("NPY header missing shape");
  }
  const dims = shapeMatch[1]
    .split(",")
    .map((s) => s.trim())
    .filter((s) => s.length > 0)
    .map((s) => Number.parseInt(s, 10));
  if (dims.length !== 3 || dims.some((d) => !Number.isFinite(d) || d < 1)) {
    throw new Error(`expected rank-3 shape, got (${shapeMatch[1]})`);
  }
  const count = dims[0] * dims[1] * dims[2];
  if (raw.length < headerEnd + count * 4) {
    throw new Error("NPY payload truncated");
  }
  const data = new Float32Array(count);
  for (let i = 0; i < count; i++) {
    data[i] = raw.readFloatLE(headerEnd + i * 4);
  }
  return { shape: [dims[0], dims[1], dims[2]], data };
}
