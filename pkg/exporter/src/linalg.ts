/** Small dense helpers over Float64Array; everything row-major. */

export type Vec = Float64Array;

export interface Matrix {
  rows: number;
  cols: number;
  data: Float64Array; // row-major
}

export function matrix(rows: number, cols: number, data?: Float64Array): Matrix {
  return { rows, cols, data: data ?? new Float64Array(rows * cols) };
}

/** y = M x */
export function matvec(m: Matrix, x: Vec): Vec {
  if (x.length !== m.cols) {
    throw new Error(`matvec: ${m.rows}x${m.cols} with vector of length ${x.length}`);
  }
  const y = new Float64Array(m.rows);
  for (let r = 0; r < m.rows; r++) {
    let acc = 0;
    const off = r * m.cols;
    for (let c = 0; c < m.cols; c++) acc += m.data[off + c] * x[c];
    y[r] = acc;
  }
  return y;
}

export function add(a: Vec, b: Vec): Vec {
  const out = new Float64Array(a.length);
  for (let i = 0; i < a.length; i++) out[i] = a[i] + b[i];
  return out;
}

export function dot(a: Vec, b: Vec): number {
  let acc = 0;
  for (let i = 0; i < a.length; i++) acc += a[i] * b[i];
  return acc;
}

export function scale(a: Vec, s: number): Vec {
  const out = new Float64Array(a.length);
  for (let i = 0; i < a.length; i++) out[i] = a[i] * s;
  return out;
}

export function norm(a: Vec): number {
  return Math.sqrt(dot(a, a));
}

export function l2normalize(a: Vec): Vec {
  const n = norm(a);
  if (n < 1e-12) {
    const out = new Float64Array(a.length);
    out[0] = 1;
    return out;
  }
  return scale(a, 1 / n);
}

export function tanhVec(a: Vec): Vec {
  const out = new Float64Array(a.length);
  for (let i = 0; i < a.length; i++) out[i] = Math.tanh(a[i]);
  return out;
}

export function softmax(a: Vec): Vec {
  let max = -Infinity;
  for (const v of a) max = Math.max(max, v);
  const out = new Float64Array(a.length);
  let sum = 0;
  for (let i = 0; i < a.length; i++) {
    out[i] = Math.exp(a[i] - max);
    sum += out[i];
  }
  for (let i = 0; i < a.length; i++) out[i] /= sum;
  return out;
}

export function cosine(a: Vec, b: Vec): number {
  return dot(a, b) / (norm(a) * norm(b));
}
