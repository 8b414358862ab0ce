/**
 * Training protocol: 60/20/20 split by image, batch 50, Adam at 1e-3
 * decayed x0.1 every 2 epochs, 10 epochs, one random 235x235 patch per
 * training image per epoch, labels = parent image sqb / 100, loss =
 * negative PLCC (or MSE via the ablation switch). Per-epoch validation
 * PLCC/SRCC goes to a metrics log; inference averages the clamped
 * 235/128 patch grid.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { Adam } from "./adam.js";
import {
  copyPatch,
  evaluationGrid,
  loadImage,
  ManifestRow,
  randomPatchOrigin,
  readManifest,
  splitRows,
} from "./data.js";
import { plccLoss } from "./loss.js";
import { createModel, DEFAULT_CONFIG, EonssConfig, EonssModel, forward, INPUT_SIZE, parameters, saveWeights } from "./model.js";
import { Rng } from "./rng.js";
import { clearTape, noGrad, record, Tensor } from "./tensor.js";
import { DecodedImage } from "./png.js";

export interface TrainProtocol {
  epochs: number;
  batchSize: number;
  learningRate: number;
  decayEveryEpochs: number;
  decayFactor: number;
  seed: number;
  loss: "plcc" | "mse";
  /** Overfit-style runs: no split, fixed patches, iteration-capped. */
  overfit?: { iterations: number; targetPlcc?: number };
}

export const DEFAULT_PROTOCOL: TrainProtocol = {
  epochs: 10,
  batchSize: 50,
  learningRate: 0.001,
  decayEveryEpochs: 2,
  decayFactor: 0.1,
  seed: 7,
  loss: "plcc",
};

export interface EpochMetrics {
  epoch: number;
  trainLoss: number;
  valPlcc: number | null;
  valSrcc: number | null;
}

export interface TrainResult {
  model: EonssModel;
  metrics: EpochMetrics[];
  skippedUndersized: number;
  finalLoss: number;
  trainPlcc: number;
}

export function pearson(a: Float64Array | number[], b: Float64Array | number[]): number {
  const n = a.length;
  let ma = 0;
  let mb = 0;
  for (let i = 0; i < n; i++) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  let saa = 0;
  let sbb = 0;
  let sab = 0;
  for (let i = 0; i < n; i++) {
    const da = a[i] - ma;
    const db = b[i] - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  return sab / Math.sqrt(saa * sbb);
}

function averageTieRanks(v: Float64Array | number[]): Float64Array {
  const n = v.length;
  const order = Array.from({ length: n }, (_, i) => i).sort((i, j) => v[i] - v[j]);
  const ranks = new Float64Array(n);
  let i = 0;
  while (i < n) {
    let j = i;
    while (j + 1 < n && v[order[j + 1]] === v[order[i]]) j++;
    const avg = (i + j) / 2 + 1;
    for (let t = i; t <= j; t++) ranks[order[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

export function spearman(a: Float64Array | number[], b: Float64Array | number[]): number {
  return pearson(averageTieRanks(a), averageTieRanks(b));
}

function mseLoss(pred: Tensor, target: Tensor): Tensor {
  const n = pred.size;
  const out = Tensor.zeros([1]);
  let acc = 0;
  for (let i = 0; i < n; i++) {
    const d = pred.data[i] - target.data[i];
    acc += d * d;
  }
  out.data[0] = acc / n;
  return record(out, [pred, target], () => {
    if (!pred.requiresGrad) return;
    const g = out.grad![0];
    const gp = pred.ensureGrad();
    for (let i = 0; i < n; i++) gp[i] += (g * 2 * (pred.data[i] - target.data[i])) / n;
  });
}

interface Sample {
  row: ManifestRow;
  image: DecodedImage;
  label: number;
}

function loadSamples(manifestPath: string, rows: ManifestRow[]): { samples: Sample[]; skipped: number } {
  const dir = path.dirname(manifestPath);
  const samples: Sample[] = [];
  let skipped = 0;
  for (const row of rows) {
    if (row.sqb === null) throw new Error(`manifest row ${row.imageId} has no sqb label`);
    const image = loadImage(dir, row);
    if (image.height < INPUT_SIZE || image.width < INPUT_SIZE) {
      skipped++;
      continue;
    }
    samples.push({ row, image, label: row.sqb / 100.0 });
  }
  return { samples, skipped };
}

function batchOf(samples: Sample[], origins: Array<[number, number]>): Tensor {
  const batch = Tensor.zeros([samples.length, 3, INPUT_SIZE, INPUT_SIZE]);
  samples.forEach((s, i) => copyPatch(s.image, origins[i][0], origins[i][1], batch, i));
  return batch;
}

function evaluateSplit(model: EonssModel, samples: Sample[]): { plcc: number | null; srcc: number | null } {
  if (samples.length < 3) return { plcc: null, srcc: null };
  const preds = samples.map((s) => predictDecoded(model, s.image));
  const labels = samples.map((s) => s.label * 100.0);
  return { plcc: pearson(preds, labels), srcc: spearman(preds, labels) };
}

export function train(manifestPath: string, protocol: TrainProtocol, config: EonssConfig = DEFAULT_CONFIG): TrainResult {
  const rng = new Rng(protocol.seed);
  const model = createModel(rng.fork(1), config);
  const rows = readManifest(manifestPath);
  const lossFn = protocol.loss === "mse" ? mseLoss : plccLoss;

  if (protocol.overfit) {
    const { samples, skipped } = loadSamples(manifestPath, rows);
    const patchRng = rng.fork(2);
    const origins = samples.map((s) => randomPatchOrigin(s.image, patchRng));
    const batch = batchOf(samples, origins);
    const labels = Tensor.from(samples.map((s) => s.label), [samples.length]);
    const optimizer = new Adam(parameters(model), protocol.learningRate);
    let loss = Infinity;
    let trainPlcc = -1;
    const metrics: EpochMetrics[] = [];
    for (let it = 0; it < protocol.overfit.iterations; it++) {
      clearTape();
      optimizer.zeroGrad();
      const pred = forward(model, batch);
      const lossT = lossFn(pred, labels);
      lossT.backward();
      optimizer.step();
      loss = lossT.item();
      trainPlcc = pearson(pred.data, labels.data);
      metrics.push({ epoch: it, trainLoss: loss, valPlcc: null, valSrcc: null });
      if (protocol.overfit.targetPlcc && trainPlcc >= protocol.overfit.targetPlcc) break;
    }
    clearTape();
    return { model, metrics, skippedUndersized: skipped, finalLoss: loss, trainPlcc };
  }

  const split = splitRows(rows, protocol.seed);
  const { samples: trainSet, skipped: skippedTrain } = loadSamples(manifestPath, split.train);
  const { samples: valSet, skipped: skippedVal } = loadSamples(manifestPath, split.val);
  const optimizer = new Adam(parameters(model), protocol.learningRate);
  const metrics: EpochMetrics[] = [];
  let lastLoss = NaN;
  let lastPlcc = NaN;
  for (let epoch = 0; epoch < protocol.epochs; epoch++) {
    const decaySteps = Math.floor(epoch / protocol.decayEveryEpochs);
    optimizer.lr = protocol.learningRate * Math.pow(protocol.decayFactor, decaySteps);
    const epochRng = rng.fork(100 + epoch);
    const order = epochRng.shuffle(trainSet);
    let lossAcc = 0;
    let batches = 0;
    for (let start = 0; start < order.length; start += protocol.batchSize) {
      const chunk = order.slice(start, start + protocol.batchSize);
      if (chunk.length < 3) continue; // correlation needs a real batch
      const origins = chunk.map((s) => randomPatchOrigin(s.image, epochRng));
      clearTape();
      optimizer.zeroGrad();
      const pred = forward(model, batchOf(chunk, origins));
      const lossT = lossFn(pred, Tensor.from(chunk.map((s) => s.label), [chunk.length]));
      lossT.backward();
      optimizer.step();
      lossAcc += lossT.item();
      batches++;
      lastLoss = lossT.item();
      lastPlcc = pearson(pred.data, chunk.map((s) => s.label));
    }
    clearTape();
    const val = noGrad(() => evaluateSplit(model, valSet));
    metrics.push({
      epoch,
      trainLoss: batches > 0 ? lossAcc / batches : NaN,
      valPlcc: val.plcc,
      valSrcc: val.srcc,
    });
  }
  return {
    model,
    metrics,
    skippedUndersized: skippedTrain + skippedVal,
    finalLoss: lastLoss,
    trainPlcc: lastPlcc,
  };
}

function predictDecoded(model: EonssModel, image: DecodedImage): number {
  const grid = evaluationGrid(image.height, image.width);
  const batch = Tensor.zeros([grid.length, 3, INPUT_SIZE, INPUT_SIZE]);
  grid.forEach(([r, c], i) => copyPatch(image, r, c, batch, i));
  const pred = noGrad(() => forward(model, batch));
  let acc = 0;
  for (let i = 0; i < pred.size; i++) acc += pred.data[i];
  return (acc / pred.size) * 100.0;
}

/** Mean patch-grid prediction on the 0-100 quality scale. */
export function predictImage(model: EonssModel, image: DecodedImage): number {
  if (image.height < INPUT_SIZE || image.width < INPUT_SIZE) {
    throw new Error(`image ${image.height}x${image.width} smaller than ${INPUT_SIZE}`);
  }
  return predictDecoded(model, image);
}

export function writeMetricsCsv(metrics: EpochMetrics[], file: string): void {
  const lines = ["epoch,train_loss,val_plcc,val_srcc"];
  for (const m of metrics) {
    lines.push(`${m.epoch},${m.trainLoss},${m.valPlcc ?? ""},${m.valSrcc ?? ""}`);
  }
  fs.writeFileSync(file, lines.join("\n") + "\n");
}

export function writePredictionsCsv(
  model: EonssModel, manifestPath: string, rows: ManifestRow[], file: string,
): void {
  const dir = path.dirname(manifestPath);
  const lines = ["image_id,prediction"];
  for (const row of rows) {
    const image = loadImage(dir, row);
    if (image.height < INPUT_SIZE || image.width < INPUT_SIZE) continue;
    lines.push(`${row.imageId},${predictImage(model, image)}`);
  }
  fs.writeFileSync(file, lines.join("\n") + "\n");
}

export function saveModel(model: EonssModel, file: string): void {
  fs.writeFileSync(file, saveWeights(model));
}
