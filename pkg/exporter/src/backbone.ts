/** Seeded toy backbones exposing the same structural pieces a pretrained
 * vision tower would: a penultimate token sequence plus the last block's
 * value projection, feed-forward, attention, and output projection. The
 * extraction rules in extract.ts are written against these interfaces, so a
 * real backbone can be slotted in by implementing them. */

import { Image, patchMeans } from "./image.js";
import { Matrix, Vec, add, dot, l2normalize, matrix, matvec, softmax, tanhVec } from "./linalg.js";
import { Rng } from "./rng.js";

export interface VitLastBlock {
  valueProject(token: Vec): Vec;
  feedForward(token: Vec): Vec;
}

export interface AttentionPool {
  query(token: Vec): Vec;
  key(token: Vec): Vec;
  value(token: Vec): Vec;
}

export interface ExtractedFeatures {
  global: Vec; // length d, unit norm
  locals: Vec[]; // L entries, length d, unit norm
}

export interface Backbone {
  id: string;
  d: number;
  L: number;
  extract(image: Image): ExtractedFeatures;
}

function seededMatrix(rng: Rng, rows: number, cols: number): Matrix {
  return matrix(rows, cols, rng.normals(rows * cols, 1 / Math.sqrt(cols)));
}

/** Two-layer tanh MLP used as the toy transformer feed-forward. */
export class ToyFeedForward {
  constructor(private w1: Matrix, private w2: Matrix) {}

  static seeded(rng: Rng, width: number): ToyFeedForward {
    return new ToyFeedForward(seededMatrix(rng, 2 * width, width),
                              seededMatrix(rng, width, 2 * width));
  }

  apply(x: Vec): Vec {
    return matvec(this.w2, tanhVec(matvec(this.w1, x)));
  }
}

export class ToyVit implements Backbone, VitLastBlock {
  readonly id: string;
  readonly d: number;
  readonly L: number;
  readonly width: number;
  private grid: number;
  private embed: Matrix;
  private clsToken: Vec;
  private posEmbed: Vec[];
  private q: Matrix;
  private k: Matrix;
  private v: Matrix;
  private ff: ToyFeedForward;
  private proj: Matrix;

  constructor(seed: number, grid = 4, width = 16, d = 16) {
    this.id = `toy-vit/seed=${seed}/grid=${grid}/width=${width}/d=${d}`;
    this.grid = grid;
    this.width = width;
    this.d = d;
    this.L = grid * grid;
    const rng = new Rng(seed);
    this.embed = seededMatrix(rng, width, 3);
    this.clsToken = rng.normals(width);
    this.posEmbed = [];
    for (let i = 0; i < this.L + 1; i++) this.posEmbed.push(rng.normals(width, 0.1));
    this.q = seededMatrix(rng, width, width);
    this.k = seededMatrix(rng, width, width);
    this.v = seededMatrix(rng, width, width);
    this.ff = ToyFeedForward.seeded(rng, width);
    this.proj = seededMatrix(rng, d, width);
  }

  /** Token sequence entering the last block: [cls, patch_1, ..., patch_L]. */
  penultimateTokens(image: Image): Vec[] {
    const tokens: Vec[] = [add(this.clsToken, this.posEmbed[0])];
    patchMeans(image, this.grid).forEach((patch, i) => {
      tokens.push(add(matvec(this.embed, patch), this.posEmbed[i + 1]));
    });
    return tokens;
  }

  valueProject(token: Vec): Vec {
    return matvec(this.v, token);
  }

  feedForward(token: Vec): Vec {
    return this.ff.apply(token);
  }

  /** The standard last block with self attention; residual + feed-forward. */
  lastBlockFull(tokens: Vec[]): Vec[] {
    const qs = tokens.map((t) => matvec(this.q, t));
    const ks = tokens.map((t) => matvec(this.k, t));
    const vs = tokens.map((t) => matvec(this.v, t));
    const invSqrt = 1 / Math.sqrt(this.width);
    return tokens.map((token, i) => {
      const scores = new Float64Array(tokens.length);
      for (let j = 0; j < tokens.length; j++) scores[j] = dot(qs[i], ks[j]) * invSqrt;
      const weights = softmax(scores);
      const attended = new Float64Array(this.width);
      for (let j = 0; j < tokens.length; j++) {
        for (let c = 0; c < this.width; c++) attended[c] += weights[j] * vs[j][c];
      }
      const mid = add(token, attended);
      return add(mid, this.ff.apply(mid));
    });
  }

  project(token: Vec): Vec {
    return matvec(this.proj, token);
  }

  /** Class-token path through the full last block, projected and normalized. */
  globalEmbedding(image: Image): Vec {
    const out = this.lastBlockFull(this.penultimateTokens(image));
    return l2normalize(this.project(out[0]));
  }

  extract(image: Image): ExtractedFeatures {
    const tokens = this.penultimateTokens(image);
    const locals = vitLocalTokens(tokens.slice(1), this);
    return {
      global: this.globalEmbedding(image),
      locals: locals.map((t) => l2normalize(this.project(t))),
    };
  }
}

export class ToyResnet implements Backbone, AttentionPool {
  readonly id: string;
  readonly d: number;
  readonly L: number;
  readonly width: number;
  private grid: number;
  private embed: Matrix;
  private qm: Matrix;
  private km: Matrix;
  private vm: Matrix;
  private proj: Matrix;

  constructor(seed: number, grid = 4, width = 16, d = 16) {
    this.id = `toy-resnet/seed=${seed}/grid=${grid}/width=${width}/d=${d}`;
    this.grid = grid;
    this.width = width;
    this.d = d;
    this.L = grid * grid;
    const rng = new Rng(seed + 0x5e5);
    this.embed = seededMatrix(rng, width, 3);
    this.qm = seededMatrix(rng, width, width);
    this.km = seededMatrix(rng, width, width);
    this.vm = seededMatrix(rng, width, width);
    this.proj = seededMatrix(rng, d, width);
  }

  featureMap(image: Image): Vec[] {
    return patchMeans(image, this.grid).map((p) => matvec(this.embed, p));
  }

  query(token: Vec): Vec {
    return matvec(this.qm, token);
  }

  key(token: Vec): Vec {
    return matvec(this.km, token);
  }

  value(token: Vec): Vec {
    return matvec(this.vm, token);
  }

  project(token: Vec): Vec {
    return matvec(this.proj, token);
  }

  /** Attention-pooled global: softmax(q(mean) . k(z_i) / sqrt(d)) . v(z_i). */
  globalEmbedding(image: Image): Vec {
    const map = this.featureMap(image);
    const pooled = attentionPool(map, this, this.width);
    return l2normalize(this.project(pooled));
  }

  extract(image: Image): ExtractedFeatures {
    const map = this.featureMap(image);
    const locals = resnetLocalTokens(map, this);
    return {
      global: this.globalEmbedding(image),
      locals: locals.map((t) => l2normalize(this.project(t))),
    };
  }
}

/** Local tokens for a ViT: z + v(z) + f(z + v(z)), the last block applied
 * without its self-attention mixing. Pre-projection. */
export function vitLocalTokens(tokens: Vec[], block: VitLastBlock): Vec[] {
  return tokens.map((z) => {
    const zv = add(z, block.valueProject(z));
    return add(zv, block.feedForward(zv));
  });
}

/** Local tokens for a ResNet: the attention-pool value projection alone.
 * Pre-projection. */
export function resnetLocalTokens(map: Vec[], pool: Pick<AttentionPool, "value">): Vec[] {
  return map.map((z) => pool.value(z));
}

export function attentionPool(map: Vec[], pool: AttentionPool, width: number): Vec {
  const mean = new Float64Array(width);
  for (const z of map) for (let c = 0; c < width; c++) mean[c] += z[c] / map.length;
  const q = pool.query(mean);
  const invSqrt = 1 / Math.sqrt(width);
  const scores = new Float64Array(map.length);
  map.forEach((z, i) => {
    scores[i] = dot(q, pool.key(z)) * invSqrt;
  });
  const weights = softmax(scores);
  const pooled = new Float64Array(width);
  map.forEach((z, i) => {
    const v = pool.value(z);
    for (let c = 0; c < width; c++) pooled[c] += weights[i] * v[c];
  });
  return pooled;
}

export function makeBackbone(id: string, seed: number): Backbone {
  if (id === "toy-vit") return new ToyVit(seed);
  if (id === "toy-resnet") return new ToyResnet(seed);
  throw new Error(
    `unrecognized backbone ${JSON.stringify(id)}; available: toy-vit, toy-resnet`
  );
}
