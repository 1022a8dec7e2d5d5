/**
 * Pluggable image/text encoders.
 *
 * An Encoder is whatever turns bytes or prompts into fixed-width float
 * vectors. The built-in `test-hash-<dim>` family is fully deterministic
 * (features are derived from SHA-256 of the input) and exists so the
 * extraction pipeline, the cache format and the engine interop can be
 * exercised without downloading a model.
 *
 * To plug in a real contrastive backbone, register a factory:
 *
 *     import { pipeline } from '@xenova/transformers'
 *     registerEncoder('siglip-base', async () => {
 *       const vision = await pipeline('image-feature-extraction', 'Xenova/siglip-base-patch16-224')
 *       const text = await pipeline('feature-extraction', 'Xenova/siglip-base-patch16-224')
 *       return {
 *         id: 'siglip-base',
 *         dim: 768,
 *         encodeImage: async bytes => Float32Array.from((await vision(bytes)).data),
 *         encodeText: async prompt => Float32Array.from((await text(prompt)).data),
 *       }
 *     })
 *
 * and name it as the manifest's `backbone`. Encoders return raw
 * embeddings; unit normalization is applied by the extraction step when
 * the manifest asks for it.
 */

import { createHash } from 'node:crypto'

export interface Encoder {
  readonly id: string
  readonly dim: number
  /** May reject with ImageDecodeError when the bytes are not an image. */
  encodeImage(bytes: Buffer): Promise<Float32Array>
  encodeText(prompt: string): Promise<Float32Array>
}

export class ImageDecodeError extends Error {}
export class UnknownBackboneError extends Error {}

type EncoderFactory = () => Promise<Encoder>

const registry = new Map<string, EncoderFactory>()

export function registerEncoder(id: string, factory: EncoderFactory): void {
  registry.set(id, factory)
}

const IMAGE_MAGICS: Array<{ format: string; bytes: Buffer }> = [
  { format: 'png', bytes: Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]) },
  { format: 'jpeg', bytes: Buffer.from([0xff, 0xd8, 0xff]) },
  { format: 'gif', bytes: Buffer.from('GIF8', 'ascii') },
  { format: 'bmp', bytes: Buffer.from('BM', 'ascii') },
]

export function sniffImageFormat(bytes: Buffer): string | undefined {
  const hit = IMAGE_MAGICS.find(
    magic => bytes.length >= magic.bytes.length && bytes.subarray(0, magic.bytes.length).equals(magic.bytes),
  )
  return hit?.format
}

/** dim pseudo-random floats in [-1, 1), a pure function of the seed bytes. */
function hashVector(domain: string, seed: Buffer, dim: number): Float32Array {
  const out = new Float32Array(dim)
  const counter = Buffer.alloc(4)
  let written = 0
  for (let block = 0; written < dim; block++) {
    counter.writeUInt32LE(block, 0)
    const digest = createHash('sha256').update(domain).update(seed).update(counter).digest()
    for (let offset = 0; offset + 4 <= digest.length && written < dim; offset += 4) {
      out[written++] = (digest.readUInt32LE(offset) / 2 ** 32) * 2 - 1
    }
  }
  return out
}

function makeHashEncoder(dim: number): Encoder {
  return {
    id: `test-hash-${dim}`,
    dim,
    async encodeImage(bytes: Buffer): Promise<Float32Array> {
      if (sniffImageFormat(bytes) === undefined) {
        throw new ImageDecodeError('bytes do not look like a supported image format')
      }
      return hashVector('image\0', bytes, dim)
    },
    async encodeText(prompt: string): Promise<Float32Array> {
      return hashVector('text\0', Buffer.from(prompt, 'utf8'), dim)
    },
  }
}

export async function resolveEncoder(backbone: string): Promise<Encoder> {
  const registered = registry.get(backbone)
  if (registered !== undefined) {
    return registered()
  }
  const match = /^test-hash-(\d+)$/.exec(backbone)
  if (match !== null) {
    const dim = Number(match[1])
    if (dim < 2) {
      throw new UnknownBackboneError(`test-hash dim must be >= 2, got ${dim}`)
    }
    return makeHashEncoder(dim)
  }
  const known = ['test-hash-<dim>', ...registry.keys()]
  throw new UnknownBackboneError(
    `unknown backbone ${JSON.stringify(backbone)}; known: ${known.join(', ')} ` +
      '(use registerEncoder to add a real model)',
  )
}
