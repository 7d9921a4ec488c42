import * as fs from 'fs'
import * as path from 'path'
import { PNG } from 'pngjs'
import * as jpeg from 'jpeg-js'

/** RGB pixels as float32 in [0, 1], row-major, channel-interleaved. */
export interface RgbImage {
  width: number
  height: number
  data: Float32Array // length = width * height * 3
}

const IMAGE_EXTENSIONS = new Set(['.png', '.jpg', '.jpeg'])

export function isImageFile(file: string): boolean {
  return IMAGE_EXTENSIONS.has(path.extname(file).toLowerCase())
}

function fromRgba(width: number, height: number, rgba: Uint8Array): RgbImage {
  const data = new Float32Array(width * height * 3)
  for (let p = 0; p < width * height; p++) {
    data[p * 3] = rgba[p * 4] / 255
    data[p * 3 + 1] = rgba[p * 4 + 1] / 255
    data[p * 3 + 2] = rgba[p * 4 + 2] / 255
  }
  return { width, height, data }
}

/** Decode a PNG or JPEG file; throws on anything unreadable. */
export function decodeImage(file: string): RgbImage {
  const buffer = fs.readFileSync(file)
  const ext = path.extname(file).toLowerCase()
  if (ext === '.png') {
    const png = PNG.sync.read(buffer)
    return fromRgba(png.width, png.height, png.data)
  }
  if (ext === '.jpg' || ext === '.jpeg') {
    const img = jpeg.decode(buffer, { useTArray: true, maxMemoryUsageInMB: 256 })
    return fromRgba(img.width, img.height, img.data)
  }
  throw new Error(`unsupported image extension: ${file}`)
}

/** Bilinear resize to size x size. */
export function resize(image: RgbImage, size: number): RgbImage {
  if (image.width === size && image.height === size) return image
  const out = new Float32Array(size * size * 3)
  const sx = image.width / size
  const sy = image.height / size
  for (let y = 0; y < size; y++) {
    const fy = Math.min((y + 0.5) * sy - 0.5, image.height - 1)
    const y0 = Math.max(Math.floor(fy), 0)
    const y1 = Math.min(y0 + 1, image.height - 1)
    const wy = Math.max(fy - y0, 0)
    for (let x = 0; x < size; x++) {
      const fx = Math.min((x + 0.5) * sx - 0.5, image.width - 1)
      const x0 = Math.max(Math.floor(fx), 0)
      const x1 = Math.min(x0 + 1, image.width - 1)
      const wx = Math.max(fx - x0, 0)
      for (let c = 0; c < 3; c++) {
        const tl = image.data[(y0 * image.width + x0) * 3 + c]
        const tr = image.data[(y0 * image.width + x1) * 3 + c]
        const bl = image.data[(y1 * image.width + x0) * 3 + c]
        const br = image.data[(y1 * image.width + x1) * 3 + c]
        const top = tl + (tr - tl) * wx
        const bottom = bl + (br - bl) * wx
        out[(y * size + x) * 3 + c] = top + (bottom - top) * wy
      }
    }
  }
  return { width: size, height: size, data: out }
}
