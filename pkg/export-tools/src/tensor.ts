/**
 * Dense float64 tensors in NCHW layout plus the handful of ops the toy
 * networks need. Everything is plain loops: clarity and bit-stable results
 * matter more than speed at export time.
 */

export interface Tensor {
  shape: number[];
  data: Float64Array;
}

export interface TensorJson {
  shape: number[];
  data: number[];
}

export function tensor(shape: number[], data?: ArrayLike<number>): Tensor {
  const size = shape.reduce((a, b) => a * b, 1);
  if (data !== undefined && data.length !== size) {
    throw new Error(`tensor data length ${data.length} != shape volume ${size}`);
  }
  return { shape: [...shape], data: data ? Float64Array.from(data) : new Float64Array(size) };
}

export function toJson(t: Tensor): TensorJson {
  return { shape: [...t.shape], data: Array.from(t.data) };
}

export function fromJson(obj: TensorJson): Tensor {
  return tensor(obj.shape, obj.data);
}

export function maxAbsDiff(a: Tensor, b: Tensor): number {
  if (a.data.length !== b.data.length) {
    throw new Error(`size mismatch: ${a.shape} vs ${b.shape}`);
  }
  let worst = 0;
  for (let i = 0; i < a.data.length; i++) {
    worst = Math.max(worst, Math.abs(a.data[i] - b.data[i]));
  }
  return worst;
}

/** Deterministic PRNG (mulberry32) with a Box-Muller gaussian on top. */
export class Rng {
  private state: number;
  private spare: number | null = null;

  constructor(seed: number) {
    this.state = seed >>> 0;
  }

  next(): number {
    this.state = (this.state + 0x6d2b79f5) >>> 0;
    let t = this.state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  }

  gaussian(std = 1.0): number {
    if (this.spare !== null) {
      const v = this.spare;
      this.spare = null;
      return v * std;
    }
    let u = 0;
    let v = 0;
    while (u === 0) u = this.next();
    v = this.next();
    const mag = Math.sqrt(-2.0 * Math.log(u));
    this.spare = mag * Math.sin(2.0 * Math.PI * v);
    return mag * Math.cos(2.0 * Math.PI * v) * std;
  }

  normalTensor(shape: number[], std = 1.0): Tensor {
    const t = tensor(shape);
    for (let i = 0; i < t.data.length; i++) t.data[i] = this.gaussian(std);
    return t;
  }
}

/** 2-D cross-correlation of (N,Cin,H,W) with (Cout,Cin,kh,kw). */
export function conv2d(
  x: Tensor,
  w: Tensor,
  stride = 1,
  padding = 0,
  bias?: Tensor,
): Tensor {
  const [n, cin, h, wd] = x.shape;
  const [cout, cinW, kh, kw] = w.shape;
  if (cin !== cinW) {
    throw new Error(`channel mismatch: input ${cin} vs weight ${cinW}`);
  }
  const ho = Math.floor((h + 2 * padding - kh) / stride) + 1;
  const wo = Math.floor((wd + 2 * padding - kw) / stride) + 1;
  if (ho < 1 || wo < 1) throw new Error("kernel larger than padded input");
  const out = tensor([n, cout, ho, wo]);
  const xs = x.data;
  const ws = w.data;
  for (let b = 0; b < n; b++) {
    for (let o = 0; o < cout; o++) {
      const biasVal = bias ? bias.data[o] : 0;
      for (let i = 0; i < ho; i++) {
        for (let j = 0; j < wo; j++) {
          let acc = 0;
          for (let c = 0; c < cin; c++) {
            for (let u = 0; u < kh; u++) {
              const yy = i * stride + u - padding;
              if (yy < 0 || yy >= h) continue;
              for (let v = 0; v < kw; v++) {
                const xx = j * stride + v - padding;
                if (xx < 0 || xx >= wd) continue;
                acc +=
                  xs[((b * cin + c) * h + yy) * wd + xx] *
                  ws[((o * cin + c) * kh + u) * kw + v];
              }
            }
          }
          out.data[((b * cout + o) * ho + i) * wo + j] = acc + biasVal;
        }
      }
    }
  }
  return out;
}

export function relu(x: Tensor): Tensor {
  const out = tensor(x.shape);
  for (let i = 0; i < x.data.length; i++) out.data[i] = Math.max(0, x.data[i]);
  return out;
}

export function sigmoid(x: Tensor): Tensor {
  const out = tensor(x.shape);
  for (let i = 0; i < x.data.length; i++) out.data[i] = 1 / (1 + Math.exp(-x.data[i]));
  return out;
}

export function add(a: Tensor, b: Tensor): Tensor {
  if (a.data.length !== b.data.length) throw new Error("add: size mismatch");
  const out = tensor(a.shape);
  for (let i = 0; i < a.data.length; i++) out.data[i] = a.data[i] + b.data[i];
  return out;
}

/** Concatenate NCHW tensors along the channel axis. */
export function concatChannels(parts: Tensor[]): Tensor {
  const [n, , h, w] = parts[0].shape;
  let cTotal = 0;
  for (const p of parts) {
    const [pn, pc, ph, pw] = p.shape;
    if (pn !== n || ph !== h || pw !== w) throw new Error("concat: spatial mismatch");
    cTotal += pc;
  }
  const out = tensor([n, cTotal, h, w]);
  let offset = 0;
  for (const p of parts) {
    const pc = p.shape[1];
    for (let b = 0; b < n; b++) {
      for (let c = 0; c < pc; c++) {
        const src = ((b * pc + c) * h * w) | 0;
        const dst = ((b * cTotal + offset + c) * h * w) | 0;
        out.data.set(p.data.subarray(src, src + h * w), dst);
      }
    }
    offset += pc;
  }
  return out;
}
