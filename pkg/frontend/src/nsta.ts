/**
 * NSTA activation container: named float arrays for parity references and
 * content targets.
 *
 * Layout (little-endian): magic "NSTA", u32 array count; per array: u16 name
 * length + utf8 name, u32 rank, rank x u32 dims, f32 payload in C order.
 */

import { ByteReader, ByteWriter } from "./binary.js";

export const NSTA_MAGIC = "NSTA";

export interface NamedArray {
  name: string;
  shape: number[];
  /** C-order payload, length = product(shape) */
  data: Float32Array;
}

function elemCount(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

export function writeNsta(items: NamedArray[]): Uint8Array {
  const w = new ByteWriter();
  w.ascii(NSTA_MAGIC);
  w.u32(items.length);
  for (const item of items) {
    if (item.data.length !== elemCount(item.shape)) {
      throw new Error(`array '${item.name}': payload does not match shape`);
    }
    const nm = new TextEncoder().encode(item.name);
    w.u16(nm.length);
    w.bytes(nm);
    w.u32(item.shape.length);
    for (const d of item.shape) w.u32(d);
    w.f32Array(item.data);
  }
  return w.finish();
}

export function readNsta(buf: Uint8Array): NamedArray[] {
  const r = new ByteReader(buf, "NSTA");
  if (r.ascii(4) !== NSTA_MAGIC) {
    throw new Error("not an NSTA file (bad magic)");
  }
  const count = r.u32();
  const out: NamedArray[] = [];
  for (let i = 0; i < count; i++) {
    const name = r.ascii(r.u16());
    const rank = r.u32();
    const shape: number[] = [];
    for (let d = 0; d < rank; d++) shape.push(r.u32());
    out.push({ name, shape, data: r.f32Array(elemCount(shape)) });
  }
  if (!r.atEnd()) throw new Error("trailing bytes after NSTA payload");
  return out;
}
