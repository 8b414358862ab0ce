/**
 * Thin command-line front end:
 *   train   --manifest corpus/manifest_sqb.csv --out runs/exp1 [--epochs N]
 *           [--seed N] [--loss plcc|mse] [--overfit N]
 *   predict --weights runs/exp1/weights.json --manifest corpus/manifest.csv
 *           --out predictions.csv
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { loadWeights } from "./model.js";
import { readManifest } from "./data.js";
import {
  DEFAULT_PROTOCOL,
  saveModel,
  train,
  writeMetricsCsv,
  writePredictionsCsv,
} from "./train.js";

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    if (!argv[i].startsWith("--") || i + 1 >= argv.length) {
      throw new Error(`bad arguments near ${argv[i]}`);
    }
    flags.set(argv[i].slice(2), argv[i + 1]);
  }
  return flags;
}

function need(flags: Map<string, string>, name: string): string {
  const v = flags.get(name);
  if (!v) throw new Error(`missing --${name}`);
  return v;
}

function main(argv: string[]): number {
  const [command, ...rest] = argv;
  if (command === "train") {
    const flags = parseFlags(rest);
    const manifest = need(flags, "manifest");
    const outDir = need(flags, "out");
    fs.mkdirSync(outDir, { recursive: true });
    const protocol = { ...DEFAULT_PROTOCOL };
    if (flags.has("epochs")) protocol.epochs = Number(flags.get("epochs"));
    if (flags.has("seed")) protocol.seed = Number(flags.get("seed"));
    if (flags.has("loss")) protocol.loss = flags.get("loss") === "mse" ? "mse" : "plcc";
    if (flags.has("overfit")) {
      protocol.overfit = { iterations: Number(flags.get("overfit")) };
    }
    const result = train(manifest, protocol);
    saveModel(result.model, path.join(outDir, "weights.json"));
    writeMetricsCsv(result.metrics, path.join(outDir, "metrics.csv"));
    if (result.skippedUndersized > 0) {
      console.error(`skipped ${result.skippedUndersized} undersized images`);
    }
    console.log(`final loss ${result.finalLoss.toFixed(6)}`);
    return 0;
  }
  if (command === "predict") {
    const flags = parseFlags(rest);
    const model = loadWeights(fs.readFileSync(need(flags, "weights"), "utf-8"));
    const manifest = need(flags, "manifest");
    writePredictionsCsv(model, manifest, readManifest(manifest), need(flags, "out"));
    return 0;
  }
  console.error("usage: cli.ts train|predict --flag value ...");
  return 2;
}

process.exit(main(process.argv.slice(2)));
