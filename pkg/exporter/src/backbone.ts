import { RgbImage } from './image'

/**
 * Feature extractors with frozen weights.
 *
 * The sandbox cannot download pretrained CNN checkpoints, so the shipped
 * backbones generate their weights from a PRNG seeded by the backbone
 * name: the weights are fixed for all time, which preserves the contract
 * that exporting twice yields value-identical files.
 *
 *   patchnet-64   strided 5x5 convolution bank (64 filters, ReLU) followed
 *                 by global average pooling; 64-dim features.
 *   colorhist-48  16-bin per-channel color histogram; 48-dim features.
 */
export interface Backbone {
  name: string
  featureWidth: number
  extract(image: RgbImage): Float32Array
}

function hashString(s: string): number {
  let h = 2166136261
  for (let i = 0; i < s.length; i++) {
    h ^= s.charCodeAt(i)
    h = Math.imul(h, 16777619)
  }
  return h >>> 0
}

function mulberry32(seed: number): () => number {
  let a = seed >>> 0
  return () => {
    a = (a + 0x6d2b79f5) | 0
    let t = Math.imul(a ^ (a >>> 15), 1 | a)
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

function frozenWeights(name: string, count: number): Float32Array {
  const rand = mulberry32(hashString(name))
  const w = new Float32Array(count)
  for (let i = 0; i < count; i++) {
    // Box-Muller, frozen per backbone name
    const u = Math.max(rand(), 1e-12)
    const v = rand()
    w[i] = Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * v)
  }
  return w
}

class PatchNet implements Backbone {
  readonly name: string
  readonly featureWidth: number
  private readonly kernel = 5
  private readonly stride = 4
  private readonly weights: Float32Array
  private readonly bias: Float32Array

  constructor(name: string, filters: number) {
    this.name = name
    this.featureWidth = filters
    const fanIn = this.kernel * this.kernel * 3
    const raw = frozenWeights(name, filters * fanIn + filters)
    const scale = 1 / Math.sqrt(fanIn)
    this.weights = raw.slice(0, filters * fanIn).map(v => v * scale)
    this.bias = raw.slice(filters * fanIn).map(v => v * 0.1)
  }

  extract(image: RgbImage): Float32Array {
    const { width, height, data } = image
    const k = this.kernel
    const fanIn = k * k * 3
    const pooled = new Float32Array(this.featureWidth)
    let positions = 0
    const patch = new Float32Array(fanIn)
    for (let y = 0; y + k <= height; y += this.stride) {
      for (let x = 0; x + k <= width; x += this.stride) {
        let i = 0
        for (let dy = 0; dy < k; dy++) {
          const row = (y + dy) * width
          for (let dx = 0; dx < k; dx++) {
            const p = (row + x + dx) * 3
            patch[i++] = data[p]
            patch[i++] = data[p + 1]
            patch[i++] = data[p + 2]
          }
        }
        for (let f = 0; f < this.featureWidth; f++) {
          let acc = this.bias[f]
          const base = f * fanIn
          for (let j = 0; j < fanIn; j++) acc += this.weights[base + j] * patch[j]
          if (acc > 0) pooled[f] += acc // ReLU then sum for the average pool
        }
        positions++
      }
    }
    if (positions === 0) throw new Error(`image smaller than ${k}x${k}`)
    for (let f = 0; f < this.featureWidth; f++) pooled[f] /= positions
    return pooled
  }
}

class ColorHistogram implements Backbone {
  readonly name: string
  readonly featureWidth: number
  private readonly bins = 16

  constructor(name: string) {
    this.name = name
    this.featureWidth = this.bins * 3
  }

  extract(image: RgbImage): Float32Array {
    const hist = new Float32Array(this.featureWidth)
    const n = image.width * image.height
    for (let p = 0; p < n; p++) {
      for (let c = 0; c < 3; c++) {
        const v = image.data[p * 3 + c]
        const bin = Math.min(Math.floor(v * this.bins), this.bins - 1)
        hist[c * this.bins + bin] += 1
      }
    }
    for (let i = 0; i < hist.length; i++) hist[i] /= n
    return hist
  }
}

const REGISTRY: Record<string, () => Backbone> = {
  'patchnet-64': () => new PatchNet('patchnet-64', 64),
  'patchnet-128': () => new PatchNet('patchnet-128', 128),
  'colorhist-48': () => new ColorHistogram('colorhist-48'),
}

export const BACKBONE_NAMES = Object.keys(REGISTRY)

export function loadBackbone(name: string): Backbone {
  const make = REGISTRY[name]
  if (!make) {
    throw new Error(
      `unknown backbone '${name}', expected one of: ${BACKBONE_NAMES.join(', ')}`,
    )
  }
  return make()
}
