import * as fs from 'fs'
import * as path from 'path'
import { loadBackbone } from './backbone'
import { decodeImage, isImageFile, resize } from './image'
import { EmbeddingFormat, EmbeddingRecord, writeRecords } from './formats'

export interface ExportConfig {
  datasetRoot: string
  backbone: string
  imageSize: number
  outputPath: string
  format: EmbeddingFormat
  batchSize?: number
  log?: (message: string) => void
}

export interface ExportResult {
  recordCount: number
  featureWidth: number
  classNames: string[]
  skipped: { file: string; reason: string }[]
  manifestPath: string
}

function listClassDirs(root: string): string[] {
  const entries = fs
    .readdirSync(root, { withFileTypes: true })
    .filter(e => e.isDirectory())
    .map(e => e.name)
    .sort()
  if (entries.length < 2) {
    throw new Error(`${root}: need at least 2 class subdirectories, found ${entries.length}`)
  }
  return entries
}

/**
 * Walk `datasetRoot` (one subdirectory per class), extract one feature
 * vector per image with the named backbone, and write the embedding file
 * plus a `<out>.manifest.txt` mapping labels to class names.
 *
 * Labels are the class-subdirectory indices in sorted order. Unreadable
 * images are skipped with a warning and noted in the manifest; an export
 * with zero usable images fails.
 */
export function exportEmbeddings(cfg: ExportConfig): ExportResult {
  if (cfg.imageSize < 8) throw new Error('image size must be at least 8 pixels')
  const log = cfg.log ?? ((m: string) => console.warn(m))
  const backbone = loadBackbone(cfg.backbone)
  const classNames = listClassDirs(cfg.datasetRoot)
  const batchSize = cfg.batchSize ?? 32

  const records: EmbeddingRecord[] = []
  const skipped: { file: string; reason: string }[] = []
  for (let label = 0; label < classNames.length; label++) {
    const dir = path.join(cfg.datasetRoot, classNames[label])
    const files = fs.readdirSync(dir).filter(isImageFile).sort()
    for (let start = 0; start < files.length; start += batchSize) {
      for (const file of files.slice(start, start + batchSize)) {
        const full = path.join(dir, file)
        try {
          const image = resize(decodeImage(full), cfg.imageSize)
          records.push({ label, values: backbone.extract(image) })
        } catch (err) {
          const reason = err instanceof Error ? err.message : String(err)
          skipped.push({ file: full, reason })
          log(`skipping ${full}: ${reason}`)
        }
      }
    }
  }
  if (records.length === 0) {
    throw new Error(`${cfg.datasetRoot}: no exportable images`)
  }

  writeRecords(records, cfg.outputPath, cfg.format)
  const manifestPath = `${cfg.outputPath}.manifest.txt`
  const lines = classNames.map((name, label) => `${label}\t${name}`)
  lines.push(`# backbone=${backbone.name} size=${cfg.imageSize} count=${records.length}`)
  for (const s of skipped) lines.push(`# skipped=${s.file} reason=${s.reason}`)
  fs.writeFileSync(manifestPath, lines.join('\n') + '\n', 'utf8')

  return {
    recordCount: records.length,
    featureWidth: backbone.featureWidth,
    classNames,
    skipped,
    manifestPath,
  }
}
