import { spawnSync } from 'node:child_process'
import { readFile, stat, writeFile } from 'node:fs/promises'
import { join } from 'node:path'

import { describe, expect, it } from 'vitest'

import { decodeCache } from '../src/embc.js'
import { registerEncoder } from '../src/encoder.js'
import { extract, ExtractionError } from '../src/extract.js'
import { loadManifest } from '../src/manifest.js'
import { runCli } from '../src/cli.js'
import { fakePng, standardFixture, writeManifestFile } from './helpers.js'

async function exists(path: string): Promise<boolean> {
  try {
    await stat(path)
    return true
  } catch {
    return false
  }
}

describe('extract', () => {
  it('produces a structurally correct cache for 2 classes x 3 images', async () => {
    const { manifestPath } = await standardFixture()
    const manifest = await loadManifest(manifestPath)
    const result = await extract(manifest)

    expect(result.numImages).toBe(6)
    expect(result.numClasses).toBe(2)
    expect(result.dim).toBe(16)
    expect(result.skipped).toEqual([])

    const cache = decodeCache(await readFile(result.cachePath))
    expect(cache.classNames).toEqual(['cat', 'dog'])
    expect([...cache.labels]).toEqual([0, 0, 0, 1, 1, 1])
    expect([...cache.splitTags]).toEqual([0, 0, 2, 0, 0, 2])
    expect(cache.normalized).toBe(true)
  })

  it('unit-normalizes every row well inside the engine tolerance', async () => {
    const { manifestPath } = await standardFixture()
    const result = await extract(await loadManifest(manifestPath))
    const cache = decodeCache(await readFile(result.cachePath))
    const rows = [
      ...splitRows(cache.imageFeatures, cache.dim),
      ...splitRows(cache.classifierWeights, cache.dim),
    ]
    expect(rows.length).toBe(8)
    for (const row of rows) {
      const norm = Math.sqrt(row.reduce((total, value) => total + value * value, 0))
      expect(Math.abs(norm - 1)).toBeLessThan(1e-3)
    }
  })

  it('writes raw embeddings when normalize is off', async () => {
    const { dir } = await standardFixture()
    const manifestPath = await writeManifestFile(dir, {
      datasetRoot: 'images',
      backbone: 'test-hash-16',
      template: 'a photo of a {class}',
      output: 'raw.embc',
      normalize: false,
      classes: [
        { name: 'cat', train: ['a.png'] },
        { name: 'dog', train: ['d.png'] },
      ],
    })
    const result = await extract(await loadManifest(manifestPath))
    const cache = decodeCache(await readFile(result.cachePath))
    expect(cache.normalized).toBe(false)
    const norms = splitRows(cache.imageFeatures, cache.dim).map(row =>
      Math.sqrt(row.reduce((total, value) => total + value * value, 0)),
    )
    expect(norms.some(norm => Math.abs(norm - 1) > 1e-3)).toBe(true)
  })

  it('is deterministic: the same manifest yields identical bytes', async () => {
    const { manifestPath } = await standardFixture()
    const manifest = await loadManifest(manifestPath)
    const first = await readFile((await extract(manifest)).cachePath)
    const second = await readFile((await extract(manifest)).cachePath)
    expect(second.equals(first)).toBe(true)
  })

  it('skips undecodable images and records them in a sidecar log', async () => {
    const { dir, manifestPath } = await standardFixture()
    await writeFile(join(dir, 'images', 'cat', 'b.png'), Buffer.from('definitely not an image'))

    const result = await extract(await loadManifest(manifestPath))
    expect(result.numImages).toBe(5)
    expect(result.skipped).toHaveLength(1)
    expect(result.skipped[0]).toMatchObject({ className: 'cat', split: 'train', file: 'b.png' })
    expect(result.skipLogPath).toBeDefined()

    const log = JSON.parse(await readFile(result.skipLogPath!, 'utf8'))
    expect(log.skipped).toHaveLength(1)
    expect(log.skipped[0].file).toBe('b.png')

    const cache = decodeCache(await readFile(result.cachePath))
    expect([...cache.labels]).toEqual([0, 0, 1, 1, 1])
  })

  it('clears a stale sidecar log once the dataset is clean again', async () => {
    const { dir, manifestPath } = await standardFixture()
    const broken = join(dir, 'images', 'cat', 'b.png')
    await writeFile(broken, Buffer.from('garbage'))
    const failed = await extract(await loadManifest(manifestPath))
    expect(await exists(failed.skipLogPath!)).toBe(true)

    await writeFile(broken, fakePng('cat/b.png'))
    const clean = await extract(await loadManifest(manifestPath))
    expect(clean.skipped).toEqual([])
    expect(clean.skipLogPath).toBeUndefined()
    expect(await exists(failed.skipLogPath!)).toBe(false)
  })

  it('fails when too few images survive decoding', async () => {
    const { dir } = await standardFixture()
    await writeFile(join(dir, 'images', 'cat', 'a.png'), Buffer.from('junk'))
    const manifestPath = await writeManifestFile(dir, {
      datasetRoot: 'images',
      backbone: 'test-hash-16',
      template: 'a photo of a {class}',
      output: 'few.embc',
      classes: [
        { name: 'cat', train: ['a.png'] },
        { name: 'dog', train: ['d.png'] },
      ],
    })
    await expect(extract(await loadManifest(manifestPath))).rejects.toThrowError(ExtractionError)
  })

  it('leaves no partial output file behind on failure', async () => {
    registerEncoder('explodes-8', async () => ({
      id: 'explodes-8',
      dim: 8,
      encodeImage: async () => {
        throw new Error('backbone crashed mid-batch')
      },
      encodeText: async () => Float32Array.from({ length: 8 }, () => 0.5),
    }))
    const { dir } = await standardFixture()
    const manifestPath = await writeManifestFile(dir, {
      datasetRoot: 'images',
      backbone: 'explodes-8',
      template: 'a photo of a {class}',
      output: 'never.embc',
      classes: [
        { name: 'cat', train: ['a.png'] },
        { name: 'dog', train: ['d.png'] },
      ],
    })
    await expect(extract(await loadManifest(manifestPath))).rejects.toThrowError(/crashed/)
    expect(await exists(join(dir, 'never.embc'))).toBe(false)
  })

  it('rejects an encoder that lies about its width', async () => {
    registerEncoder('narrow-8', async () => ({
      id: 'narrow-8',
      dim: 8,
      encodeImage: async () => Float32Array.from([1, 2, 3]),
      encodeText: async () => Float32Array.from({ length: 8 }, () => 0.5),
    }))
    const { dir } = await standardFixture()
    const manifestPath = await writeManifestFile(dir, {
      datasetRoot: 'images',
      backbone: 'narrow-8',
      template: 'a photo of a {class}',
      output: 'narrow.embc',
      classes: [
        { name: 'cat', train: ['a.png'] },
        { name: 'dog', train: ['d.png'] },
      ],
    })
    await expect(extract(await loadManifest(manifestPath))).rejects.toThrowError(/expected 8/)
  })
})

describe('engine interop', () => {
  it('extracted caches pass the engine loader and evaluate end to end', async () => {
    const { dir, manifestPath } = await standardFixture()
    const result = await extract(await loadManifest(manifestPath))

    const inspectJson = join(dir, 'inspect.json')
    const inspect = spawnSync(
      'embadapt',
      ['inspect', '--cache', result.cachePath, '--out', inspectJson],
      { encoding: 'utf8' },
    )
    expect(inspect.error).toBeUndefined()
    expect(inspect.status, inspect.stderr).toBe(0)
    const report = JSON.parse(await readFile(inspectJson, 'utf8'))
    expect(report.dim).toBe(16)
    expect(report.num_images).toBe(6)
    expect(report.num_classes).toBe(2)
    expect(report.normalized).toBe(true)
    expect(report.split_counts).toEqual({ train: 4, val: 0, test: 2 })

    const evalJson = join(dir, 'zs.json')
    const evaluate = spawnSync(
      'embadapt',
      ['eval', '--cache', result.cachePath, '--method', 'zero-shot', '--out', evalJson],
      { encoding: 'utf8' },
    )
    expect(evaluate.status, evaluate.stderr).toBe(0)
    const payload = JSON.parse(await readFile(evalJson, 'utf8'))
    expect(payload.report.method).toBe('zero_shot')
    expect(payload.report.num_test).toBe(2)
    expect(payload.report.overall_accuracy).toBeGreaterThanOrEqual(0)
    expect(payload.report.overall_accuracy).toBeLessThanOrEqual(1)
  })
})

describe('runCli', () => {
  it('extracts from a manifest and reports the summary', async () => {
    const { dir, manifestPath } = await standardFixture()
    const code = await runCli(['extract', '--manifest', manifestPath])
    expect(code).toBe(0)
    expect(await exists(join(dir, 'out.embc'))).toBe(true)
  })

  it('returns 1 on usage errors', async () => {
    expect(await runCli([])).toBe(1)
    expect(await runCli(['extract'])).toBe(1)
    expect(await runCli(['extract', '--bogus'])).toBe(1)
    expect(await runCli(['transmogrify', '--manifest', 'x.json'])).toBe(1)
  })

  it('returns 1 on manifest validation errors', async () => {
    const { dir } = await standardFixture()
    const manifestPath = await writeManifestFile(dir, {
      datasetRoot: 'images',
      backbone: 'test-hash-16',
      template: 'no placeholder here',
      output: 'x.embc',
      classes: [
        { name: 'cat', train: ['a.png'] },
        { name: 'dog', train: ['d.png'] },
      ],
    })
    expect(await runCli(['extract', '--manifest', manifestPath])).toBe(1)
  })

  it('returns 2 when the manifest file is missing', async () => {
    const { dir } = await standardFixture()
    expect(await runCli(['extract', '--manifest', join(dir, 'missing.json')])).toBe(2)
  })
})

function splitRows(flat: Float32Array, dim: number): number[][] {
  const rows: number[][] = []
  for (let start = 0; start < flat.length; start += dim) {
    rows.push([...flat.subarray(start, start + dim)])
  }
  return rows
}
