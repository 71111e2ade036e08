/**
 * Little-endian byte packing helpers shared by the NSTW/NSTA writers.
 *
 * Kept dependency-free on purpose: the container formats are tiny and the
 * exact byte layout is the contract, so hand-rolled read/write with explicit
 * offsets is easier to audit than a serialization library.
 */

export class ByteWriter {
  private chunks: Uint8Array[] = [];

  bytes(b: Uint8Array): void {
    this.chunks.push(b);
  }

  ascii(s: string): void {
    this.bytes(new TextEncoder().encode(s));
  }

  u16(v: number): void {
    const b = new Uint8Array(2);
    new DataView(b.buffer).setUint16(0, v, true);
    this.bytes(b);
  }

  u32(v: number): void {
    const b = new Uint8Array(4);
    new DataView(b.buffer).setUint32(0, v >>> 0, true);
    this.bytes(b);
  }

  f32(v: number): void {
    const b = new Uint8Array(4);
    new DataView(b.buffer).setFloat32(0, v, true);
    this.bytes(b);
  }

  f32Array(values: ArrayLike<number>): void {
    const b = new Uint8Array(4 * values.length);
    const view = new DataView(b.buffer);
    for (let i = 0; i < values.length; i++) {
      view.setFloat32(4 * i, values[i] as number, true);
    }
    this.bytes(b);
  }

  finish(): Uint8Array {
    let total = 0;
    for (const c of this.chunks) total += c.length;
    const out = new Uint8Array(total);
    let pos = 0;
    for (const c of this.chunks) {
      out.set(c, pos);
      pos += c.length;
    }
    return out;
  }
}

export class ByteReader {
  private view: DataView;
  private pos = 0;

  constructor(private buf: Uint8Array, private label: string) {
    this.view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  }

  private need(n: number): number {
    if (this.pos + n > this.buf.length) {
      throw new Error(`truncated ${this.label} file`);
    }
    const at = this.pos;
    this.pos += n;
    return at;
  }

  bytes(n: number): Uint8Array {
    const at = this.need(n);
    return this.buf.subarray(at, at + n);
  }

  ascii(n: number): string {
    return new TextDecoder().decode(this.bytes(n));
  }

  u16(): number {
    return this.view.getUint16(this.need(2), true);
  }

  u32(): number {
    return this.view.getUint32(this.need(4), true);
  }

  f32(): number {
    return this.view.getFloat32(this.need(4), true);
  }

  f32Array(n: number): Float32Array {
    const at = this.need(4 * n);
    const out = new Float32Array(n);
    for (let i = 0; i < n; i++) out[i] = this.view.getFloat32(at + 4 * i, true);
    return out;
  }

  atEnd(): boolean {
    return this.pos === this.buf.length;
  }
}
