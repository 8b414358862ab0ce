/**
 * Conv / pooling / GDN / linear primitives with hand-written backward
 * passes. Convolution uses per-sample im2col + a cache-friendly GEMM; the
 * column matrix is recomputed during backward instead of cached, trading
 * a little time for a batch-size-independent memory footprint.
 */

import { record, Tensor } from "./tensor.js";

export function square(a: Tensor): Tensor {
  const out = Tensor.zeros(a.shape);
  for (let i = 0; i < a.size; i++) out.data[i] = a.data[i] * a.data[i];
  return record(out, [a], () => {
    if (!a.requiresGrad) return;
    const g = out.grad!;
    const ga = a.ensureGrad();
    for (let i = 0; i < g.length; i++) ga[i] += 2 * a.data[i] * g[i];
  });
}

export function addScalar(a: Tensor, s: number): Tensor {
  const out = Tensor.zeros(a.shape);
  for (let i = 0; i < a.size; i++) out.data[i] = a.data[i] + s;
  return record(out, [a], () => {
    if (!a.requiresGrad) return;
    const g = out.grad!;
    const ga = a.ensureGrad();
    for (let i = 0; i < g.length; i++) ga[i] += g[i];
  });
}

export function convOutSize(dim: number, kernel: number, stride: number, pad: number): number {
  return Math.floor((dim + 2 * pad - kernel) / stride) + 1;
}

function validOwRange(kj: number, pad: number, stride: number, w: number, outW: number): [number, number] {
  // input column for output ow is ow*stride - pad + kj; clamp to [0, w)
  const off = kj - pad;
  const lo = Math.max(0, Math.ceil(-off / stride));
  const hi = Math.min(outW - 1, Math.floor((w - 1 - off) / stride));
  return [lo, hi];
}

function im2col(
  x: Float64Array, base: number, cin: number, h: number, w: number,
  kh: number, kw: number, stride: number, pad: number,
  outH: number, outW: number, cols: Float64Array,
): void {
  const patch = outH * outW;
  for (let c = 0; c < cin; c++) {
    const plane = base + c * h * w;
    for (let ki = 0; ki < kh; ki++) {
      for (let kj = 0; kj < kw; kj++) {
        const row = (c * kh * kw + ki * kw + kj) * patch;
        const [owLo, owHi] = validOwRange(kj, pad, stride, w, outW);
        for (let oh = 0; oh < outH; oh++) {
          const ih = oh * stride - pad + ki;
          const dst = row + oh * outW;
          if (ih < 0 || ih >= h || owLo > owHi) {
            cols.fill(0, dst, dst + outW);
            continue;
          }
          if (owLo > 0) cols.fill(0, dst, dst + owLo);
          if (owHi < outW - 1) cols.fill(0, dst + owHi + 1, dst + outW);
          const src = plane + ih * w + kj - pad;
          for (let ow = owLo; ow <= owHi; ow++) {
            cols[dst + ow] = x[src + ow * stride];
          }
        }
      }
    }
  }
}

function col2imAdd(
  cols: Float64Array, grad: Float64Array, base: number, cin: number, h: number, w: number,
  kh: number, kw: number, stride: number, pad: number, outH: number, outW: number,
): void {
  const patch = outH * outW;
  for (let c = 0; c < cin; c++) {
    const plane = base + c * h * w;
    for (let ki = 0; ki < kh; ki++) {
      for (let kj = 0; kj < kw; kj++) {
        const row = (c * kh * kw + ki * kw + kj) * patch;
        const [owLo, owHi] = validOwRange(kj, pad, stride, w, outW);
        if (owLo > owHi) continue;
        for (let oh = 0; oh < outH; oh++) {
          const ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= h) continue;
          const src = row + oh * outW;
          const dst = plane + ih * w + kj - pad;
          for (let ow = owLo; ow <= owHi; ow++) {
            grad[dst + ow * stride] += cols[src + ow];
          }
        }
      }
    }
  }
}

/** x: [N, Cin, H, W], weight: [Cout, Cin, kh, kw], bias: [Cout]. */
export function conv2d(
  x: Tensor, weight: Tensor, bias: Tensor, stride: number, pad: number,
): Tensor {
  const [n, cin, h, w] = x.shape;
  const [cout, wcin, kh, kw] = weight.shape;
  if (wcin !== cin) throw new Error(`conv2d: ${cin} input channels vs weight ${wcin}`);
  const outH = convOutSize(h, kh, stride, pad);
  const outW = convOutSize(w, kw, stride, pad);
  if (outH < 1 || outW < 1) throw new Error("conv2d: empty output");
  const k = cin * kh * kw;
  const patch = outH * outW;
  const out = Tensor.zeros([n, cout, outH, outW]);
  const cols = new Float64Array(k * patch);

  for (let s = 0; s < n; s++) {
    im2col(x.data, s * cin * h * w, cin, h, w, kh, kw, stride, pad, outH, outW, cols);
    const outBase = s * cout * patch;
    for (let co = 0; co < cout; co++) {
      const dst = outBase + co * patch;
      out.data.fill(bias.data[co], dst, dst + patch);
      const wRow = co * k;
      let kk = 0;
      // 4-way blocking over kernel taps keeps the output row in registers
      for (; kk + 4 <= k; kk += 4) {
        const w0 = weight.data[wRow + kk];
        const w1 = weight.data[wRow + kk + 1];
        const w2 = weight.data[wRow + kk + 2];
        const w3 = weight.data[wRow + kk + 3];
        const s0 = kk * patch;
        const s1 = s0 + patch;
        const s2 = s1 + patch;
        const s3 = s2 + patch;
        for (let p = 0; p < patch; p++) {
          out.data[dst + p] +=
            w0 * cols[s0 + p] + w1 * cols[s1 + p] + w2 * cols[s2 + p] + w3 * cols[s3 + p];
        }
      }
      for (; kk < k; kk++) {
        const wv = weight.data[wRow + kk];
        const src = kk * patch;
        for (let p = 0; p < patch; p++) out.data[dst + p] += wv * cols[src + p];
      }
    }
  }

  return record(out, [x, weight, bias], () => {
    const g = out.grad!;
    const gw = weight.requiresGrad ? weight.ensureGrad() : null;
    const gb = bias.requiresGrad ? bias.ensureGrad() : null;
    const gx = x.requiresGrad ? x.ensureGrad() : null;
    const bcols = new Float64Array(k * patch);
    const dcols = new Float64Array(k * patch);
    for (let s = 0; s < n; s++) {
      im2col(x.data, s * cin * h * w, cin, h, w, kh, kw, stride, pad, outH, outW, bcols);
      const outBase = s * cout * patch;
      if (gx) dcols.fill(0);
      for (let co = 0; co < cout; co++) {
        const src = outBase + co * patch;
        if (gb) {
          let acc = 0;
          for (let p = 0; p < patch; p++) acc += g[src + p];
          gb[co] += acc;
        }
        const wRow = co * k;
        let kk = 0;
        for (; kk + 4 <= k; kk += 4) {
          const c0 = kk * patch;
          const c1 = c0 + patch;
          const c2 = c1 + patch;
          const c3 = c2 + patch;
          if (gw) {
            let a0 = 0;
            let a1 = 0;
            let a2 = 0;
            let a3 = 0;
            for (let p = 0; p < patch; p++) {
              const gv = g[src + p];
              a0 += gv * bcols[c0 + p];
              a1 += gv * bcols[c1 + p];
              a2 += gv * bcols[c2 + p];
              a3 += gv * bcols[c3 + p];
            }
            gw[wRow + kk] += a0;
            gw[wRow + kk + 1] += a1;
            gw[wRow + kk + 2] += a2;
            gw[wRow + kk + 3] += a3;
          }
          if (gx) {
            const w0 = weight.data[wRow + kk];
            const w1 = weight.data[wRow + kk + 1];
            const w2 = weight.data[wRow + kk + 2];
            const w3 = weight.data[wRow + kk + 3];
            for (let p = 0; p < patch; p++) {
              const gv = g[src + p];
              dcols[c0 + p] += w0 * gv;
              dcols[c1 + p] += w1 * gv;
              dcols[c2 + p] += w2 * gv;
              dcols[c3 + p] += w3 * gv;
            }
          }
        }
        for (; kk < k; kk++) {
          const colBase = kk * patch;
          if (gw) {
            let acc = 0;
            for (let p = 0; p < patch; p++) acc += g[src + p] * bcols[colBase + p];
            gw[wRow + kk] += acc;
          }
          if (gx) {
            const wv = weight.data[wRow + kk];
            if (wv !== 0) {
              for (let p = 0; p < patch; p++) dcols[colBase + p] += wv * g[src + p];
            }
          }
        }
      }
      if (gx) col2imAdd(dcols, gx, s * cin * h * w, cin, h, w, kh, kw, stride, pad, outH, outW);
    }
  });
}

/** 2x2 max pooling with stride 2; odd trailing row/column dropped. */
export function maxPool2x2(x: Tensor): Tensor {
  const [n, c, h, w] = x.shape;
  const outH = Math.floor(h / 2);
  const outW = Math.floor(w / 2);
  const out = Tensor.zeros([n, c, outH, outW]);
  const argmax = new Int32Array(out.size);
  let o = 0;
  for (let s = 0; s < n; s++) {
    for (let ch = 0; ch < c; ch++) {
      const plane = (s * c + ch) * h * w;
      for (let oh = 0; oh < outH; oh++) {
        for (let ow = 0; ow < outW; ow++) {
          let best = -Infinity;
          let bestIdx = -1;
          for (let di = 0; di < 2; di++) {
            const rowBase = plane + (2 * oh + di) * w + 2 * ow;
            for (let dj = 0; dj < 2; dj++) {
              const v = x.data[rowBase + dj];
              if (v > best) {
                best = v;
                bestIdx = rowBase + dj;
              }
            }
          }
          out.data[o] = best;
          argmax[o] = bestIdx;
          o++;
        }
      }
    }
  }
  return record(out, [x], () => {
    if (!x.requiresGrad) return;
    const g = out.grad!;
    const gx = x.ensureGrad();
    for (let i = 0; i < g.length; i++) gx[argmax[i]] += g[i];
  });
}

/**
 * Generalized divisive normalization at every spatial site:
 *   y_c = x_c / sqrt(beta_c + sum_k gamma[c,k] x_k^2).
 * beta/gamma are the concrete (already reparameterized) coefficients.
 */
export function gdn(x: Tensor, beta: Tensor, gamma: Tensor): Tensor {
  const shape = x.shape;
  const c = shape[1]; // [N, C] head vectors or [N, C, H, W] feature maps
  const sites = x.size / (shape[0] * c);
  const n = shape[0];
  if (beta.size !== c || gamma.size !== c * c) {
    throw new Error(`gdn: ${c} channels vs beta ${beta.size}, gamma ${gamma.size}`);
  }
  const out = Tensor.zeros(shape);
  const denomPow = new Float64Array(n * c * sites); // s^(-1/2) per element

  const xs = new Float64Array(c);
  for (let s = 0; s < n; s++) {
    for (let site = 0; site < sites; site++) {
      const base = s * c * sites + site;
      for (let ch = 0; ch < c; ch++) {
        const v = x.data[base + ch * sites];
        xs[ch] = v * v;
      }
      for (let ch = 0; ch < c; ch++) {
        let acc = beta.data[ch];
        const row = ch * c;
        for (let k = 0; k < c; k++) acc += gamma.data[row + k] * xs[k];
        const inv = 1.0 / Math.sqrt(acc);
        const idx = base + ch * sites;
        denomPow[idx] = inv;
        out.data[idx] = x.data[idx] * inv;
      }
    }
  }

  return record(out, [x, beta, gamma], () => {
    const g = out.grad!;
    const gx = x.requiresGrad ? x.ensureGrad() : null;
    const gBeta = beta.requiresGrad ? beta.ensureGrad() : null;
    const gGamma = gamma.requiresGrad ? gamma.ensureGrad() : null;
    const coef = new Float64Array(c); // g_c * x_c * (-1/2) s_c^(-3/2)
    for (let s = 0; s < n; s++) {
      for (let site = 0; site < sites; site++) {
        const base = s * c * sites + site;
        for (let ch = 0; ch < c; ch++) {
          const idx = base + ch * sites;
          const inv = denomPow[idx];
          coef[ch] = -0.5 * g[idx] * x.data[idx] * inv * inv * inv;
          if (gBeta) gBeta[ch] += coef[ch];
        }
        for (let k = 0; k < c; k++) {
          const xk = x.data[base + k * sites];
          if (gGamma) {
            const xk2 = xk * xk;
            for (let ch = 0; ch < c; ch++) gGamma[ch * c + k] += coef[ch] * xk2;
          }
          if (gx) {
            let acc = g[base + k * sites] * denomPow[base + k * sites];
            for (let ch = 0; ch < c; ch++) acc += 2 * coef[ch] * gamma.data[ch * c + k] * xk;
            gx[base + k * sites] += acc;
          }
        }
      }
    }
  });
}

/** x: [N, F], weight: [out, F], bias: [out]. */
export function linear(x: Tensor, weight: Tensor, bias: Tensor): Tensor {
  const [n, f] = x.shape;
  const [outF, wf] = weight.shape;
  if (wf !== f) throw new Error(`linear: ${f} features vs weight ${wf}`);
  const out = Tensor.zeros([n, outF]);
  for (let s = 0; s < n; s++) {
    const xBase = s * f;
    const oBase = s * outF;
    for (let o = 0; o < outF; o++) {
      let acc = bias.data[o];
      const wBase = o * f;
      for (let i = 0; i < f; i++) acc += weight.data[wBase + i] * x.data[xBase + i];
      out.data[oBase + o] = acc;
    }
  }
  return record(out, [x, weight, bias], () => {
    const g = out.grad!;
    const gx = x.requiresGrad ? x.ensureGrad() : null;
    const gw = weight.requiresGrad ? weight.ensureGrad() : null;
    const gb = bias.requiresGrad ? bias.ensureGrad() : null;
    for (let s = 0; s < n; s++) {
      const xBase = s * f;
      const oBase = s * outF;
      for (let o = 0; o < outF; o++) {
        const go = g[oBase + o];
        if (go === 0) continue;
        if (gb) gb[o] += go;
        const wBase = o * f;
        for (let i = 0; i < f; i++) {
          if (gw) gw[wBase + i] += go * x.data[xBase + i];
          if (gx) gx[xBase + i] += go * weight.data[wBase + i];
        }
      }
    }
  });
}

export function reshape(x: Tensor, shape: number[]): Tensor {
  const out = new Tensor(x.data, shape);
  return record(out, [x], () => {
    if (!x.requiresGrad) return;
    const g = out.grad!;
    const gx = x.ensureGrad();
    for (let i = 0; i < g.length; i++) gx[i] += g[i];
  });
}
