#!/usr/bin/env node
import { BACKBONE_NAMES } from './backbone'
import { exportEmbeddings } from './export'
import { EmbeddingFormat } from './formats'

const USAGE = `usage: embedding-export export --root <dir> --backbone <name> --size <px> --out <path> --format csv|bin

Extract one feature vector per image (per-class subdirectories under
--root) and write them in the embedding engine's file format, with a
<out>.manifest.txt mapping labels to class names.

backbones: ${BACKBONE_NAMES.join(', ')}`

function parseArgs(argv: string[]): Record<string, string> {
  const out: Record<string, string> = {}
  for (let i = 0; i < argv.length; i++) {
    const a = argv[i]
    if (!a.startsWith('--')) throw new Error(`unexpected argument ${a}`)
    const value = argv[++i]
    if (value === undefined) throw new Error(`missing value for ${a}`)
    out[a.slice(2)] = value
  }
  return out
}

export function main(argv: string[]): number {
  if (argv[0] !== 'export') {
    console.error(USAGE)
    return argv.length === 0 || argv[0] === '--help' ? 0 : 1
  }
  let args: Record<string, string>
  try {
    args = parseArgs(argv.slice(1))
  } catch (err) {
    console.error(`embedding-export: ${err instanceof Error ? err.message : err}`)
    console.error(USAGE)
    return 1
  }
  const root = args['root']
  const outPath = args['out']
  if (!root || !outPath) {
    console.error('embedding-export: --root and --out are required')
    console.error(USAGE)
    return 1
  }
  const format = (args['format'] ?? 'csv') as EmbeddingFormat
  if (format !== 'csv' && format !== 'bin') {
    console.error(`embedding-export: bad --format ${format}, expected csv|bin`)
    return 1
  }
  try {
    const result = exportEmbeddings({
      datasetRoot: root,
      backbone: args['backbone'] ?? 'patchnet-64',
      imageSize: Number(args['size'] ?? 64),
      outputPath: outPath,
      format,
      batchSize: args['batch'] ? Number(args['batch']) : undefined,
    })
    console.log(
      `wrote ${result.recordCount} records of dim ${result.featureWidth} ` +
        `for ${result.classNames.length} classes to ${outPath}`,
    )
    if (result.skipped.length > 0) {
      console.log(`skipped ${result.skipped.length} unreadable file(s), see manifest`)
    }
    return 0
  } catch (err) {
    console.error(`embedding-export: ${err instanceof Error ? err.message : err}`)
    return 2
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)))
}
