/**
 * Corpus access: the dataset builder's manifest CSV (with the sqb column
 * filled) plus its PNG files. Patches are 235x235x3 in NCHW order,
 * normalized labels are sqb / 100.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { decodePng, DecodedImage } from "./png.js";
import { hash32, Rng } from "./rng.js";
import { INPUT_SIZE } from "./model.js";
import { Tensor } from "./tensor.js";

export interface ManifestRow {
  imageId: string;
  refId: string;
  stage: number;
  sqb: number | null;
  path: string;
}

function splitCsvLine(line: string): string[] {
  const out: string[] = [];
  let field = "";
  let quoted = false;
  for (let i = 0; i < line.length; i++) {
    const ch = line[i];
    if (quoted) {
      if (ch === '"' && line[i + 1] === '"') {
        field += '"';
        i++;
      } else if (ch === '"') {
        quoted = false;
      } else {
        field += ch;
      }
    } else if (ch === '"') {
      quoted = true;
    } else if (ch === ",") {
      out.push(field);
      field = "";
    } else {
      field += ch;
    }
  }
  out.push(field);
  return out;
}

export function readManifest(manifestPath: string): ManifestRow[] {
  const text = fs.readFileSync(manifestPath, "utf-8");
  const lines = text.split(/\r?\n/).filter((l) => l.length > 0);
  if (lines.length === 0) throw new Error(`empty manifest ${manifestPath}`);
  const header = splitCsvLine(lines[0]);
  const col = (name: string) => {
    const idx = header.indexOf(name);
    if (idx < 0) throw new Error(`manifest missing column ${name}`);
    return idx;
  };
  const cImage = col("image_id");
  const cRef = col("ref_id");
  const cStage = col("stage");
  const cSqb = col("sqb");
  const cPath = col("path");
  return lines.slice(1).map((line) => {
    const f = splitCsvLine(line);
    return {
      imageId: f[cImage],
      refId: f[cRef],
      stage: Number(f[cStage]),
      sqb: f[cSqb] === "" ? null : Number(f[cSqb]),
      path: f[cPath],
    };
  });
}

export function loadImage(manifestDir: string, row: ManifestRow): DecodedImage {
  return decodePng(fs.readFileSync(path.join(manifestDir, row.path)));
}

/** HWC [0,1] image -> one NCHW patch slot of a batch tensor. */
export function copyPatch(
  img: DecodedImage, top: number, left: number, batch: Tensor, slot: number,
): void {
  const size = INPUT_SIZE;
  if (top < 0 || left < 0 || top + size > img.height || left + size > img.width) {
    throw new Error(`patch (${top},${left}) outside ${img.height}x${img.width}`);
  }
  const plane = size * size;
  const base = slot * 3 * plane;
  for (let r = 0; r < size; r++) {
    const srcRow = ((top + r) * img.width + left) * img.channels;
    const dstRow = base + r * size;
    for (let c = 0; c < size; c++) {
      const src = srcRow + c * img.channels;
      if (img.channels === 3) {
        batch.data[dstRow + c] = img.data[src];
        batch.data[dstRow + c + plane] = img.data[src + 1];
        batch.data[dstRow + c + 2 * plane] = img.data[src + 2];
      } else {
        const v = img.data[src];
        batch.data[dstRow + c] = v;
        batch.data[dstRow + c + plane] = v;
        batch.data[dstRow + c + 2 * plane] = v;
      }
    }
  }
}

export function randomPatchOrigin(img: DecodedImage, rng: Rng): [number, number] {
  return [rng.int(img.height - INPUT_SIZE + 1), rng.int(img.width - INPUT_SIZE + 1)];
}

/** Boundary-clamped 235/128 evaluation grid (matches the builder's rule). */
export function evaluationGrid(height: number, width: number, stride = 128): Array<[number, number]> {
  const axis = (dim: number): number[] => {
    const last = dim - INPUT_SIZE;
    const offs: number[] = [];
    for (let o = 0; o < dim; o += stride) {
      offs.push(Math.min(o, last));
      if (o >= last) break;
    }
    return [...new Set(offs)].sort((a, b) => a - b);
  };
  const rows = axis(height);
  const cols = axis(width);
  const out: Array<[number, number]> = [];
  for (const r of rows) for (const c of cols) out.push([r, c]);
  return out;
}

export type SplitName = "train" | "val" | "test";

/**
 * Deterministic 60/20/20 split keyed by a hash of (seed, image_id):
 * membership depends only on the id, never on manifest row order.
 */
export function splitRows(rows: ManifestRow[], seed: number): Record<SplitName, ManifestRow[]> {
  const out: Record<SplitName, ManifestRow[]> = { train: [], val: [], test: [] };
  for (const row of rows) {
    const h = hash32(`${seed}:${row.imageId}`) / 4294967296;
    const bucket: SplitName = h < 0.6 ? "train" : h < 0.8 ? "val" : "test";
    out[bucket].push(row);
  }
  for (const name of ["train", "val", "test"] as SplitName[]) {
    out[name].sort((a, b) => (a.imageId < b.imageId ? -1 : a.imageId > b.imageId ? 1 : 0));
  }
  return out;
}
