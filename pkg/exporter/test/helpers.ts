import * as fs from 'fs'
import * as path from 'path'
import { PNG } from 'pngjs'

function mulberry32(seed: number): () => number {
  let a = seed >>> 0
  return () => {
    a = (a + 0x6d2b79f5) | 0
    let t = Math.imul(a ^ (a >>> 15), 1 | a)
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

export function writeTestPng(
  file: string,
  size: number,
  base: [number, number, number],
  seed: number,
): void {
  const png = new PNG({ width: size, height: size })
  const rand = mulberry32(seed)
  for (let p = 0; p < size * size; p++) {
    for (let c = 0; c < 3; c++) {
      const noise = (rand() - 0.5) * 60
      png.data[p * 4 + c] = Math.max(0, Math.min(255, Math.round(base[c] + noise)))
    }
    png.data[p * 4 + 3] = 255
  }
  fs.writeFileSync(file, PNG.sync.write(png))
}

const CLASS_COLORS: [number, number, number][] = [
  [200, 40, 40],
  [40, 200, 40],
  [40, 40, 200],
  [200, 200, 40],
  [40, 200, 200],
]

/** Per-class subdirectories of noisy solid-color PNGs. */
export function makeImageDataset(
  root: string,
  classNames: string[],
  perClass: number,
  size = 24,
): void {
  classNames.forEach((name, label) => {
    const dir = path.join(root, name)
    fs.mkdirSync(dir, { recursive: true })
    for (let i = 0; i < perClass; i++) {
      writeTestPng(
        path.join(dir, `img${String(i).padStart(3, '0')}.png`),
        size,
        CLASS_COLORS[label % CLASS_COLORS.length],
        label * 1000 + i,
      )
    }
  })
}

export function tempDir(name: string): string {
  const dir = fs.mkdtempSync(path.join(require('os').tmpdir(), `${name}-`))
  return dir
}
