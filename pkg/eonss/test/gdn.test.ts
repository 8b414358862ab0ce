import { describe, expect, it } from "vitest";

import { gdn } from "../src/layers.js";
import { Rng } from "../src/rng.js";
import { clearTape, mean, Tensor } from "../src/tensor.js";
import { gradCheck } from "./gradcheck.js";

function randTensor(rng: Rng, shape: number[], scale = 1, requiresGrad = false): Tensor {
  const t = Tensor.zeros(shape, requiresGrad);
  for (let i = 0; i < t.size; i++) t.data[i] = rng.gaussian() * scale;
  return t;
}

describe("gdn", () => {
  it("is the identity for gamma = 0, beta = 1", () => {
    const rng = new Rng(1);
    const x = randTensor(rng, [2, 4, 3, 3]);
    const beta = Tensor.from(new Array(4).fill(1), [4]);
    const gamma = Tensor.zeros([4, 4]);
    const y = gdn(x, beta, gamma);
    for (let i = 0; i < x.size; i++) expect(y.data[i]).toBeCloseTo(x.data[i], 12);
  });

  it("maps zero input to zero", () => {
    const x = Tensor.zeros([1, 3, 2, 2]);
    const beta = Tensor.from([0.5, 1.0, 2.0], [3]);
    const gamma = Tensor.from(new Array(9).fill(0.3), [3, 3]);
    const y = gdn(x, beta, gamma);
    for (let i = 0; i < y.size; i++) expect(y.data[i]).toBe(0);
  });

  it("stays finite on large inputs", () => {
    const x = Tensor.from(new Array(1 * 2 * 2 * 2).fill(1e6), [1, 2, 2, 2]);
    const beta = Tensor.from([0.1, 0.1], [2]);
    const gamma = Tensor.from([0.2, 0.1, 0.1, 0.2], [2, 2]);
    const y = gdn(x, beta, gamma);
    for (let i = 0; i < y.size; i++) expect(Number.isFinite(y.data[i])).toBe(true);
  });

  it("matches central differences for x, beta, and gamma", () => {
    const rng = new Rng(7);
    const x = randTensor(rng, [2, 3, 2, 2], 0.8, true);
    const beta = Tensor.from([0.7, 1.1, 0.9], [3], true);
    const gamma = Tensor.zeros([3, 3], true);
    for (let i = 0; i < gamma.size; i++) gamma.data[i] = 0.05 + 0.1 * rng.next();
    const f = () => mean(gdn(x, beta, gamma));
    const report = gradCheck(f, [x, beta, gamma]);
    expect(report.maxRelError).toBeLessThan(1e-4);
    clearTape();
  });

  it("matches central differences on the head (vector channels) layout", () => {
    const rng = new Rng(8);
    const x = randTensor(rng, [3, 5], 1.0, true);
    const beta = Tensor.from([0.6, 0.8, 1.0, 1.2, 0.9], [5], true);
    const gamma = Tensor.zeros([5, 5], true);
    for (let i = 0; i < gamma.size; i++) gamma.data[i] = 0.02 + 0.05 * rng.next();
    const f = () => mean(gdn(x, beta, gamma));
    const report = gradCheck(f, [x, beta, gamma]);
    expect(report.maxRelError).toBeLessThan(1e-4);
    clearTape();
  });
});
