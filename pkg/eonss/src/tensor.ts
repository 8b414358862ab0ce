/**
 * Minimal float64 tape-based autograd.
 *
 * Tensors carry flat Float64Array storage plus a shape; ops record their
 * parents and a backward closure on a global tape, and backward() walks
 * the tape in reverse creation order. Everything is double precision so
 * analytic gradients can be checked against central differences at 1e-4
 * relative error.
 */

export type Shape = number[];

export function sizeOf(shape: Shape): number {
  return shape.reduce((a, b) => a * b, 1);
}

let tape: Tensor[] = [];
let tapeActive = true;

export function noGrad<T>(fn: () => T): T {
  const prev = tapeActive;
  tapeActive = false;
  try {
    return fn();
  } finally {
    tapeActive = prev;
  }
}

export class Tensor {
  data: Float64Array;
  shape: Shape;
  grad: Float64Array | null = null;
  requiresGrad: boolean;
  parents: Tensor[] = [];
  backwardFn: (() => void) | null = null;

  constructor(data: Float64Array, shape: Shape, requiresGrad = false) {
    if (data.length !== sizeOf(shape)) {
      throw new Error(`data length ${data.length} != shape ${shape.join("x")}`);
    }
    this.data = data;
    this.shape = shape.slice();
    this.requiresGrad = requiresGrad;
  }

  static zeros(shape: Shape, requiresGrad = false): Tensor {
    return new Tensor(new Float64Array(sizeOf(shape)), shape, requiresGrad);
  }

  static from(values: number[] | Float64Array, shape: Shape, requiresGrad = false): Tensor {
    return new Tensor(Float64Array.from(values), shape, requiresGrad);
  }

  static scalar(v: number): Tensor {
    return Tensor.from([v], [1]);
  }

  get size(): number {
    return this.data.length;
  }

  ensureGrad(): Float64Array {
    if (this.grad === null) this.grad = new Float64Array(this.size);
    return this.grad;
  }

  zeroGrad(): void {
    this.grad = null;
  }

  item(): number {
    if (this.size !== 1) throw new Error(`item() on size-${this.size} tensor`);
    return this.data[0];
  }

  /** Run reverse-mode accumulation from this scalar. */
  backward(): void {
    if (this.size !== 1) throw new Error("backward() needs a scalar loss");
    this.ensureGrad()[0] = 1.0;
    const upto = tape.indexOf(this);
    const nodes = upto >= 0 ? tape.slice(0, upto + 1) : tape.slice();
    for (let i = nodes.length - 1; i >= 0; i--) {
      const node = nodes[i];
      if (node.backwardFn && node.grad) node.backwardFn();
    }
  }
}

export function record(out: Tensor, parents: Tensor[], backwardFn: () => void): Tensor {
  if (tapeActive && parents.some((p) => p.requiresGrad)) {
    out.requiresGrad = true;
    out.parents = parents;
    out.backwardFn = backwardFn;
    tape.push(out);
  }
  return out;
}

export function clearTape(): void {
  tape = [];
}

// --- elementwise / reduction ops --------------------------------------------

export function add(a: Tensor, b: Tensor): Tensor {
  if (a.size !== b.size) throw new Error("add: size mismatch");
  const out = Tensor.zeros(a.shape);
  for (let i = 0; i < a.size; i++) out.data[i] = a.data[i] + b.data[i];
  return record(out, [a, b], () => {
    const g = out.grad!;
    if (a.requiresGrad) {
      const ga = a.ensureGrad();
      for (let i = 0; i < g.length; i++) ga[i] += g[i];
    }
    if (b.requiresGrad) {
      const gb = b.ensureGrad();
      for (let i = 0; i < g.length; i++) gb[i] += g[i];
    }
  });
}

export function scale(a: Tensor, s: number): Tensor {
  const out = Tensor.zeros(a.shape);
  for (let i = 0; i < a.size; i++) out.data[i] = a.data[i] * s;
  return record(out, [a], () => {
    if (!a.requiresGrad) return;
    const g = out.grad!;
    const ga = a.ensureGrad();
    for (let i = 0; i < g.length; i++) ga[i] += s * g[i];
  });
}

export function mean(a: Tensor): Tensor {
  const out = Tensor.zeros([1]);
  let acc = 0;
  for (let i = 0; i < a.size; i++) acc += a.data[i];
  out.data[0] = acc / a.size;
  return record(out, [a], () => {
    if (!a.requiresGrad) return;
    const g = out.grad![0] / a.size;
    const ga = a.ensureGrad();
    for (let i = 0; i < a.size; i++) ga[i] += g;
  });
}
