/**
 * Negative Pearson correlation loss. Targets can live on any scale: the
 * loss is invariant to positive affine transforms of the predictions, and
 * it is automatically bounded in [-1, 1]. A small epsilon on both
 * standard deviations keeps constant-prediction batches finite.
 */

import { record, Tensor } from "./tensor.js";

export const LOSS_EPS = 1e-8;

export function plccLoss(pred: Tensor, target: Tensor): Tensor {
  const n = pred.size;
  if (target.size !== n) throw new Error("plccLoss: length mismatch");
  if (n < 3) throw new Error("plccLoss: need a batch of at least 3");

  let mp = 0;
  let mt = 0;
  for (let i = 0; i < n; i++) {
    mp += pred.data[i];
    mt += target.data[i];
  }
  mp /= n;
  mt /= n;
  let spp = 0;
  let stt = 0;
  let spt = 0;
  for (let i = 0; i < n; i++) {
    const dp = pred.data[i] - mp;
    const dt = target.data[i] - mt;
    spp += dp * dp;
    stt += dt * dt;
    spt += dp * dt;
  }
  const sp = Math.sqrt(spp / n) + LOSS_EPS;
  const st = Math.sqrt(stt / n) + LOSS_EPS;
  const corr = spt / n / (sp * st);

  const out = Tensor.from([-corr], [1]);
  return record(out, [pred, target], () => {
    if (!pred.requiresGrad) return;
    const g = out.grad![0];
    const gp = pred.ensureGrad();
    // d corr / d p_i = [dt_i / (sp st) - corr * dp_i / sp^2] / n,
    // with the epsilon-shifted sp entering both places.
    const rawSp = Math.sqrt(spp / n);
    const dSpDenom = rawSp > 0 ? rawSp : 1.0; // eps guard: sp gradient vanishes at 0
    for (let i = 0; i < n; i++) {
      const dp = pred.data[i] - mp;
      const dt = target.data[i] - mt;
      const dCorr =
        dt / (n * sp * st) -
        ((spt / n) * (dp / (n * dSpDenom))) / (sp * sp * st);
      gp[i] += -g * dCorr;
    }
  });
}
