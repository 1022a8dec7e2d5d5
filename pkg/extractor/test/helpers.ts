import { mkdir, mkdtemp, writeFile } from 'node:fs/promises'
import { tmpdir } from 'node:os'
import { join } from 'node:path'

export const PNG_MAGIC = Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a])

/** Magic bytes plus a distinguishing payload; enough for the test encoder. */
export function fakePng(tag: string): Buffer {
  return Buffer.concat([PNG_MAGIC, Buffer.from(`payload:${tag}`, 'utf8')])
}

export async function makeWorkspace(): Promise<string> {
  return mkdtemp(join(tmpdir(), 'extractor-test-'))
}

export interface DatasetClassSpec {
  name: string
  train?: string[]
  val?: string[]
  test?: string[]
}

/** Lay out <root>/<class>/<file> fixtures with decodable fake images. */
export async function writeDataset(root: string, classes: DatasetClassSpec[]): Promise<void> {
  for (const klass of classes) {
    const folder = join(root, klass.name)
    await mkdir(folder, { recursive: true })
    for (const file of [...(klass.train ?? []), ...(klass.val ?? []), ...(klass.test ?? [])]) {
      await writeFile(join(folder, file), fakePng(`${klass.name}/${file}`))
    }
  }
}

export async function writeManifestFile(dir: string, manifest: object): Promise<string> {
  const path = join(dir, 'manifest.json')
  await writeFile(path, JSON.stringify(manifest, null, 2))
  return path
}

/** A small two-class manifest over a fresh fixture dataset. */
export async function standardFixture(): Promise<{ dir: string; manifestPath: string }> {
  const dir = await makeWorkspace()
  const classes: DatasetClassSpec[] = [
    { name: 'cat', train: ['a.png', 'b.png'], test: ['c.png'] },
    { name: 'dog', train: ['d.png', 'e.png'], test: ['f.png'] },
  ]
  await writeDataset(join(dir, 'images'), classes)
  const manifestPath = await writeManifestFile(dir, {
    datasetRoot: 'images',
    backbone: 'test-hash-16',
    template: 'a photo of a {class}',
    output: 'out.embc',
    classes: [
      { name: 'cat', train: ['a.png', 'b.png'], test: ['c.png'] },
      { name: 'dog', train: ['d.png', 'e.png'], test: ['f.png'] },
    ],
  })
  return { dir, manifestPath }
}
