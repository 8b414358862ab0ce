/**
 * Minimal PNG reader for the corpus files: 8-bit depth, grayscale or RGB,
 * non-interlaced (exactly what the dataset builder writes). Returns
 * samples as float64 in [0, 1], shape-tagged HxWxC.
 */

import * as zlib from "node:zlib";

export interface DecodedImage {
  width: number;
  height: number;
  channels: 1 | 3;
  /** Row-major, channel-interleaved, in [0, 1]. */
  data: Float64Array;
}

const PNG_MAGIC = Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  return pb <= pc ? b : c;
}

export function decodePng(buf: Buffer): DecodedImage {
  if (!buf.subarray(0, 8).equals(PNG_MAGIC)) throw new Error("not a PNG file");
  let width = 0;
  let height = 0;
  let channels: 1 | 3 = 1;
  const idat: Buffer[] = [];
  let pos = 8;
  while (pos + 8 <= buf.length) {
    const length = buf.readUInt32BE(pos);
    const kind = buf.toString("ascii", pos + 4, pos + 8);
    const body = buf.subarray(pos + 8, pos + 8 + length);
    if (kind === "IHDR") {
      width = body.readUInt32BE(0);
      height = body.readUInt32BE(4);
      const bitDepth = body[8];
      const colorType = body[9];
      const interlace = body[12];
      if (bitDepth !== 8) throw new Error(`unsupported bit depth ${bitDepth}`);
      if (interlace !== 0) throw new Error("interlaced PNG unsupported");
      if (colorType === 0) channels = 1;
      else if (colorType === 2) channels = 3;
      else throw new Error(`unsupported color type ${colorType}`);
    } else if (kind === "IDAT") {
      idat.push(body);
    } else if (kind === "IEND") {
      break;
    }
    pos += 12 + length;
  }
  if (width === 0 || height === 0 || idat.length === 0) throw new Error("truncated PNG");

  const raw = zlib.inflateSync(Buffer.concat(idat));
  const stride = width * channels;
  if (raw.length < height * (stride + 1)) throw new Error("PNG pixel data too short");

  const out = new Float64Array(width * height * channels);
  const prev = new Uint8Array(stride);
  const cur = new Uint8Array(stride);
  for (let y = 0; y < height; y++) {
    const rowBase = y * (stride + 1);
    const filter = raw[rowBase];
    for (let x = 0; x < stride; x++) {
      const v = raw[rowBase + 1 + x];
      const left = x >= channels ? cur[x - channels] : 0;
      const up = prev[x];
      const upLeft = x >= channels ? prev[x - channels] : 0;
      let recon: number;
      switch (filter) {
        case 0:
          recon = v;
          break;
        case 1:
          recon = v + left;
          break;
        case 2:
          recon = v + up;
          break;
        case 3:
          recon = v + ((left + up) >> 1);
          break;
        case 4:
          recon = v + paeth(left, up, upLeft);
          break;
        default:
          throw new Error(`unknown PNG filter ${filter}`);
      }
      cur[x] = recon & 0xff;
    }
    const outBase = y * stride;
    for (let x = 0; x < stride; x++) out[outBase + x] = cur[x] / 255.0;
    prev.set(cur);
  }
  return { width, height, channels, data: out };
}
