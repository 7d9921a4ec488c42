import { test } from 'node:test'
import assert from 'node:assert/strict'
import * as fs from 'fs'
import * as path from 'path'
import { spawnSync } from 'child_process'
import { exportEmbeddings } from '../src/export'
import { readBinary } from '../src/formats'
import { main as cliMain } from '../src/cli'
import { makeImageDataset, tempDir } from './helpers'


test('2 classes x 3 images gives 6 records at the backbone width', () => {
  const root = tempDir('exp')
  makeImageDataset(root, ['cats', 'dogs'], 3)
  const out = path.join(root, 'emb.bin')
  const result = exportEmbeddings({
    datasetRoot: root, backbone: 'patchnet-64', imageSize: 16,
    outputPath: out, format: 'bin',
  })
  assert.equal(result.recordCount, 6)
  assert.equal(result.featureWidth, 64)
  const { records } = readBinary(out)
  assert.equal(records.length, 6)
  assert.equal(records[0].values.length, 64)
})

test('labels are sorted class-subdirectory indices', () => {
  const root = tempDir('exp')
  makeImageDataset(root, ['zebra', 'ant', 'moose'], 2)
  const out = path.join(root, 'emb.bin')
  const result = exportEmbeddings({
    datasetRoot: root, backbone: 'colorhist-48', imageSize: 16,
    outputPath: out, format: 'bin',
  })
  assert.deepEqual(result.classNames, ['ant', 'moose', 'zebra'])
  const labels = readBinary(out).records.map(r => r.label)
  assert.deepEqual(labels, [0, 0, 1, 1, 2, 2])
})

test('exporting twice with identical config is value-identical', () => {
  const root = tempDir('exp')
  makeImageDataset(root, ['a', 'b'], 4)
  const out1 = path.join(root, 'one.bin')
  const out2 = path.join(root, 'two.bin')
  const cfg = {
    datasetRoot: root, backbone: 'patchnet-64', imageSize: 20, format: 'bin' as const,
  }
  exportEmbeddings({ ...cfg, outputPath: out1 })
  exportEmbeddings({ ...cfg, outputPath: out2 })
  assert.ok(fs.readFileSync(out1).equals(fs.readFileSync(out2)))
})

test('manifest maps every label to its class name and echoes the count', () => {
  const root = tempDir('exp')
  makeImageDataset(root, ['north', 'south'], 3)
  const out = path.join(root, 'emb.csv')
  const result = exportEmbeddings({
    datasetRoot: root, backbone: 'colorhist-48', imageSize: 16,
    outputPath: out, format: 'csv',
  })
  const manifest = fs.readFileSync(result.manifestPath, 'utf8').trim().split('\n')
  const mapping = manifest.filter(l => !l.startsWith('#'))
  assert.deepEqual(mapping, ['0\tnorth', '1\tsouth'])
  const names = new Set(mapping.map(l => l.split('\t')[1]))
  assert.equal(names.size, mapping.length) // injective
  const meta = manifest.find(l => l.startsWith('# backbone='))
  assert.ok(meta)
  assert.match(meta!, /backbone=colorhist-48 size=16 count=6/)
  // the count in the manifest matches the records in the file exactly
  const lines = fs.readFileSync(out, 'ascii').trim().split('\n')
  assert.equal(lines.length, 6)
})

test('unreadable image is skipped with a manifest note', () => {
  const root = tempDir('exp')
  makeImageDataset(root, ['good', 'bad'], 2)
  fs.writeFileSync(path.join(root, 'bad', 'broken.png'), 'not a png at all')
  const out = path.join(root, 'emb.csv')
  const warnings: string[] = []
  const result = exportEmbeddings({
    datasetRoot: root, backbone: 'colorhist-48', imageSize: 16,
    outputPath: out, format: 'csv', log: m => warnings.push(m),
  })
  assert.equal(result.recordCount, 4)
  assert.equal(result.skipped.length, 1)
  assert.equal(warnings.length, 1)
  const manifest = fs.readFileSync(result.manifestPath, 'utf8')
  assert.match(manifest, /# skipped=.*broken\.png/)
})

test('zero exportable images is an error', () => {
  const root = tempDir('exp')
  fs.mkdirSync(path.join(root, 'a'))
  fs.mkdirSync(path.join(root, 'b'))
  assert.throws(
    () =>
      exportEmbeddings({
        datasetRoot: root, backbone: 'colorhist-48', imageSize: 16,
        outputPath: path.join(root, 'emb.csv'), format: 'csv',
      }),
    /no exportable images/,
  )
})

test('fewer than two class directories is an error', () => {
  const root = tempDir('exp')
  makeImageDataset(root, ['only'], 2)
  assert.throws(
    () =>
      exportEmbeddings({
        datasetRoot: root, backbone: 'colorhist-48', imageSize: 16,
        outputPath: path.join(root, 'emb.csv'), format: 'csv',
      }),
    /at least 2 class subdirectories/,
  )
})

test('cli export command works and reports counts', () => {
  const root = tempDir('exp')
  makeImageDataset(root, ['x', 'y'], 2)
  const out = path.join(root, 'cli.bin')
  const rc = cliMain([
    'export', '--root', root, '--backbone', 'colorhist-48',
    '--size', '16', '--out', out, '--format', 'bin',
  ])
  assert.equal(rc, 0)
  assert.equal(readBinary(out).records.length, 4)
})

test('cli rejects bad arguments with usage exit code', () => {
  assert.equal(cliMain(['export', '--root']), 1)
  assert.equal(cliMain(['export', '--format', 'xml', '--root', 'r', '--out', 'o']), 1)
  assert.equal(cliMain(['wrongcommand']), 1)
})

test('end to end: exported file drives a baseline evaluation in the engine', () => {
  const probe = spawnSync('taskmetric', ['--help'], { encoding: 'utf8' })
  assert.equal(
    probe.error, undefined,
    'taskmetric CLI must be installed for the integration check',
  )

  const root = tempDir('exp')
  makeImageDataset(root, ['red', 'green', 'blue'], 12)
  const out = path.join(root, 'emb.bin')
  const result = exportEmbeddings({
    datasetRoot: root, backbone: 'patchnet-64', imageSize: 24,
    outputPath: out, format: 'bin',
  })
  assert.equal(result.recordCount, 36)

  const run = spawnSync(
    'taskmetric',
    [
      'eval', '--embeddings', out, '--format', 'bin',
      '--n-way', '3', '--k-shot', '1', '--n-query', '3',
      '--trials', '10', '--seed', '1',
    ],
    { encoding: 'utf8' },
  )
  assert.equal(run.status, 0, run.stderr)
  const mean = run.stdout.match(/^mean_accuracy=([0-9.]+)$/m)
  assert.ok(mean, `engine output missing accuracy: ${run.stdout}`)
  // solid-color classes are separable; the baseline should be far above chance
  assert.ok(Number(mean![1]) > 0.8, `accuracy ${mean![1]} unexpectedly low`)

  // the CSV route loads in the engine as well
  const csvOut = path.join(root, 'emb.csv')
  exportEmbeddings({
    datasetRoot: root, backbone: 'colorhist-48', imageSize: 24,
    outputPath: csvOut, format: 'csv',
  })
  const runCsv = spawnSync(
    'taskmetric',
    [
      'eval', '--embeddings', csvOut, '--format', 'csv',
      '--n-way', '3', '--k-shot', '1', '--n-query', '3',
      '--trials', '5', '--eam', 'on', '--bisim', 'on',
    ],
    { encoding: 'utf8' },
  )
  assert.equal(runCsv.status, 0, runCsv.stderr)
})
