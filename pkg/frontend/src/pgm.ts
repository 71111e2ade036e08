/**
 * Binary PGM (P5) read/write matching the engine's conventions: 8- or
 * 16-bit samples (16-bit big-endian per the format), values normalized to
 * [0, 1], and image row 0 stored as the *bottom* raster row.
 */

export interface GrayImage {
  height: number;
  width: number;
  /** row-major (height, width), row 0 = bottom, values in [0, 1] */
  data: Float64Array;
}

export function writePgm(img: GrayImage, bits: 8 | 16 = 16): Uint8Array {
  const maxval = (1 << bits) - 1;
  const header = new TextEncoder().encode(`P5\n${img.width} ${img.height}\n${maxval}\n`);
  const bytesPer = bits === 16 ? 2 : 1;
  const raster = new Uint8Array(img.height * img.width * bytesPer);
  const view = new DataView(raster.buffer);
  for (let r = 0; r < img.height; r++) {
    const srcRow = img.height - 1 - r; // flip: file top row = image last row
    for (let c = 0; c < img.width; c++) {
      const v = img.data[srcRow * img.width + c]!;
      const q = Math.round(Math.min(1, Math.max(0, v)) * maxval);
      const at = (r * img.width + c) * bytesPer;
      if (bits === 16) view.setUint16(at, q, false);
      else view.setUint8(at, q);
    }
  }
  const out = new Uint8Array(header.length + raster.length);
  out.set(header, 0);
  out.set(raster, header.length);
  return out;
}

export function readPgm(buf: Uint8Array): GrayImage {
  if (buf[0] !== 0x50 || buf[1] !== 0x35) {
    throw new Error("not a binary PGM (P5) file");
  }
  // header tokens after the magic: width, height, maxval; '#' starts a comment
  const tokens: number[] = [];
  let pos = 2;
  while (tokens.length < 3) {
    while (pos < buf.length && isSpace(buf[pos]!)) pos++;
    if (pos >= buf.length) throw new Error("truncated PGM header");
    if (buf[pos] === 0x23) {
      while (pos < buf.length && buf[pos] !== 0x0a) pos++;
      continue;
    }
    let end = pos;
    while (end < buf.length && !isSpace(buf[end]!)) end++;
    tokens.push(Number(new TextDecoder().decode(buf.subarray(pos, end))));
    pos = end;
  }
  pos++; // the single whitespace byte after maxval
  const [width, height, maxval] = tokens as [number, number, number];
  if (!Number.isInteger(width) || !Number.isInteger(height) || !Number.isInteger(maxval)) {
    throw new Error("malformed PGM header");
  }
  const wide = maxval > 255;
  const bytesPer = wide ? 2 : 1;
  if (buf.length - pos < width * height * bytesPer) {
    throw new Error("truncated PGM raster");
  }
  const view = new DataView(buf.buffer, buf.byteOffset + pos);
  const data = new Float64Array(height * width);
  for (let r = 0; r < height; r++) {
    const dstRow = height - 1 - r;
    for (let c = 0; c < width; c++) {
      const at = (r * width + c) * bytesPer;
      const q = wide ? view.getUint16(at, false) : view.getUint8(at);
      data[dstRow * width + c] = q / maxval;
    }
  }
  return { height, width, data };
}

function isSpace(b: number): boolean {
  return b === 0x20 || b === 0x09 || b === 0x0a || b === 0x0d;
}
