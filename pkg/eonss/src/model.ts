/**
 * The six-stage quality network: four (stride-2 conv -> GDN -> 2x2
 * max-pool) feature stages that take a 235x235x3 patch down to a 1x1
 * feature vector, then fully-connected -> GDN -> fully-connected to one
 * scalar. GDN is the only nonlinearity; in the head it treats the hidden
 * units as channels.
 *
 * GDN coefficients are stored as free parameters u with beta = u^2 + 1e-6
 * and gamma = u^2, so positivity survives every gradient update without
 * clipping.
 */

import { addScalar, conv2d, convOutSize, gdn, linear, maxPool2x2, reshape, square } from "./layers.js";
import { Rng } from "./rng.js";
import { Tensor } from "./tensor.js";

export const INPUT_SIZE = 235;
export const GDN_BETA_OFFSET = 1e-6;

export interface EonssConfig {
  channels: [number, number, number, number];
  kernels: [number, number, number, number];
  paddings: [number, number, number, number];
  headHidden: number;
}

/** Kernel/padding ladder maps 235 -> 118 -> 59 -> 30 -> 15 -> 8 -> 4 -> 2 -> 1. */
export const DEFAULT_CONFIG: EonssConfig = {
  channels: [8, 16, 32, 64],
  kernels: [7, 5, 5, 3],
  paddings: [3, 2, 2, 1],
  headHidden: 32,
};

export interface GdnParams {
  uBeta: Tensor;
  uGamma: Tensor;
}

export interface ConvStage {
  weight: Tensor;
  bias: Tensor;
  kernel: number;
  pad: number;
  gdn: GdnParams;
}

export interface EonssModel {
  config: EonssConfig;
  stages: ConvStage[];
  fc1: { weight: Tensor; bias: Tensor };
  headGdn: GdnParams;
  fc2: { weight: Tensor; bias: Tensor };
}

function heNormal(rng: Rng, shape: number[], fanIn: number): Tensor {
  const t = Tensor.zeros(shape, true);
  const std = Math.sqrt(2.0 / fanIn);
  for (let i = 0; i < t.size; i++) t.data[i] = rng.gaussian() * std;
  return t;
}

function freshGdn(channels: number): GdnParams {
  // beta starts at ~1 and gamma at 0.1*I: a gentle, genuinely nonlinear
  // gain control from the first step
  const uBeta = Tensor.zeros([channels], true);
  uBeta.data.fill(Math.sqrt(1.0 - GDN_BETA_OFFSET));
  const uGamma = Tensor.zeros([channels, channels], true);
  for (let c = 0; c < channels; c++) uGamma.data[c * channels + c] = Math.sqrt(0.1);
  return { uBeta, uGamma };
}

export function createModel(rng: Rng, config: EonssConfig = DEFAULT_CONFIG): EonssModel {
  const stages: ConvStage[] = [];
  let inCh = 3;
  let dim = INPUT_SIZE;
  for (let s = 0; s < 4; s++) {
    const outCh = config.channels[s];
    const k = config.kernels[s];
    const pad = config.paddings[s];
    stages.push({
      weight: heNormal(rng, [outCh, inCh, k, k], inCh * k * k),
      bias: Tensor.zeros([outCh], true),
      kernel: k,
      pad,
      gdn: freshGdn(outCh),
    });
    dim = Math.floor(convOutSize(dim, k, 2, pad) / 2);
    inCh = outCh;
  }
  if (dim !== 1) {
    throw new Error(`config does not reduce ${INPUT_SIZE} to 1x1 (got ${dim}x${dim})`);
  }
  return {
    config,
    stages,
    fc1: {
      weight: heNormal(rng, [config.headHidden, inCh], inCh),
      bias: Tensor.zeros([config.headHidden], true),
    },
    headGdn: freshGdn(config.headHidden),
    fc2: {
      weight: heNormal(rng, [1, config.headHidden], config.headHidden),
      bias: Tensor.zeros([1], true),
    },
  };
}

export function gdnCoefficients(params: GdnParams): { beta: Tensor; gamma: Tensor } {
  return {
    beta: addScalar(square(params.uBeta), GDN_BETA_OFFSET),
    gamma: square(params.uGamma),
  };
}

/** batch: [N, 3, 235, 235] -> per-patch scalar predictions [N]. */
export function forward(model: EonssModel, batch: Tensor): Tensor {
  const [n, c, h, w] = batch.shape;
  if (c !== 3 || h !== INPUT_SIZE || w !== INPUT_SIZE) {
    throw new Error(`expected [N, 3, ${INPUT_SIZE}, ${INPUT_SIZE}] input, got ${batch.shape.join("x")}`);
  }
  let x = batch;
  for (const stage of model.stages) {
    x = conv2d(x, stage.weight, stage.bias, 2, stage.pad);
    const { beta, gamma } = gdnCoefficients(stage.gdn);
    x = gdn(x, beta, gamma);
    x = maxPool2x2(x);
  }
  x = reshape(x, [n, model.config.channels[3]]);
  x = linear(x, model.fc1.weight, model.fc1.bias);
  const { beta, gamma } = gdnCoefficients(model.headGdn);
  x = gdn(x, beta, gamma);
  x = linear(x, model.fc2.weight, model.fc2.bias);
  return reshape(x, [n]);
}

export function parameters(model: EonssModel): Tensor[] {
  const params: Tensor[] = [];
  for (const s of model.stages) {
    params.push(s.weight, s.bias, s.gdn.uBeta, s.gdn.uGamma);
  }
  params.push(model.fc1.weight, model.fc1.bias);
  params.push(model.headGdn.uBeta, model.headGdn.uGamma);
  params.push(model.fc2.weight, model.fc2.bias);
  return params;
}

export function saveWeights(model: EonssModel): string {
  const doc = {
    config: model.config,
    tensors: parameters(model).map((t) => ({ shape: t.shape, data: Array.from(t.data) })),
  };
  return JSON.stringify(doc);
}

export function loadWeights(text: string): EonssModel {
  const doc = JSON.parse(text);
  const model = createModel(new Rng(0), doc.config);
  const params = parameters(model);
  if (params.length !== doc.tensors.length) throw new Error("weights file mismatch");
  params.forEach((t, i) => {
    const saved = doc.tensors[i];
    if (t.size !== saved.data.length) throw new Error(`tensor ${i} size mismatch`);
    t.data.set(saved.data);
  });
  return model;
}
