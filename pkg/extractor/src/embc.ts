/**
 * Binary embedding-cache files.
 *
 * This is the boundary artifact between the extractor and the training
 * engine, so the layout here must match the engine's reader bit for bit
 * (little-endian, no compression):
 *
 *     magic               4 bytes   "EMBC"
 *     format_version      u32       currently 1
 *     dim                 u32       embedding width D
 *     num_images          u64
 *     num_classes         u32       K
 *     normalized_flag     u8        1 if all rows are unit L2 norm
 *     reserved            7 bytes   zeros
 *     image_features      num_images * dim   f32
 *     labels              num_images         u32
 *     split_tags          num_images         u8   (0=train, 1=val, 2=test)
 *     class_names         per class: u16 byte length + UTF-8 bytes
 *     classifier_weights  num_classes * dim  f32
 */

export const MAGIC = 'EMBC'
export const FORMAT_VERSION = 1
export const HEADER_SIZE = 32

export const SPLIT_TAGS = { train: 0, val: 1, test: 2 } as const
export type SplitName = keyof typeof SPLIT_TAGS

export interface CacheData {
  dim: number
  /** row-major, numImages x dim */
  imageFeatures: Float32Array
  labels: Uint32Array
  splitTags: Uint8Array
  classNames: string[]
  /** row-major, numClasses x dim */
  classifierWeights: Float32Array
  normalized: boolean
}

export class CacheFormatError extends Error {}

function checkShape(cache: CacheData): { numImages: number; numClasses: number } {
  const { dim, classNames } = cache
  const numClasses = classNames.length
  if (!Number.isInteger(dim) || dim < 2) {
    throw new CacheFormatError(`need dim >= 2, got ${dim}`)
  }
  if (numClasses < 2) {
    throw new CacheFormatError(`need at least 2 classes, got ${numClasses}`)
  }
  if (cache.imageFeatures.length % dim !== 0) {
    throw new CacheFormatError(
      `imageFeatures length ${cache.imageFeatures.length} is not a multiple of dim ${dim}`,
    )
  }
  const numImages = cache.imageFeatures.length / dim
  if (cache.labels.length !== numImages || cache.splitTags.length !== numImages) {
    throw new CacheFormatError(
      `labels/splitTags length must equal image count ${numImages}`,
    )
  }
  if (cache.classifierWeights.length !== numClasses * dim) {
    throw new CacheFormatError(
      `classifierWeights length ${cache.classifierWeights.length} != ${numClasses} * ${dim}`,
    )
  }
  for (const label of cache.labels) {
    if (label >= numClasses) {
      throw new CacheFormatError(`label ${label} out of range for ${numClasses} classes`)
    }
  }
  for (const tag of cache.splitTags) {
    if (tag > SPLIT_TAGS.test) {
      throw new CacheFormatError(`split tag ${tag} is not 0 (train), 1 (val) or 2 (test)`)
    }
  }
  for (const name of classNames) {
    if (name.length === 0) {
      throw new CacheFormatError('class names must be non-empty')
    }
  }
  if (new Set(classNames).size !== numClasses) {
    throw new CacheFormatError('class names must be unique')
  }
  return { numImages, numClasses }
}

export function encodeCache(cache: CacheData): Buffer {
  const { numImages, numClasses } = checkShape(cache)
  const nameBlobs = cache.classNames.map(name => Buffer.from(name, 'utf8'))
  for (const blob of nameBlobs) {
    if (blob.length > 0xffff) {
      throw new CacheFormatError('class name longer than 65535 UTF-8 bytes')
    }
  }
  const namesSize = nameBlobs.reduce((total, blob) => total + 2 + blob.length, 0)
  const size =
    HEADER_SIZE +
    numImages * cache.dim * 4 +
    numImages * 4 +
    numImages +
    namesSize +
    numClasses * cache.dim * 4

  const out = Buffer.alloc(size)
  let offset = 0
  out.write(MAGIC, offset, 'ascii')
  offset += 4
  offset = out.writeUInt32LE(FORMAT_VERSION, offset)
  offset = out.writeUInt32LE(cache.dim, offset)
  offset = out.writeBigUInt64LE(BigInt(numImages), offset)
  offset = out.writeUInt32LE(numClasses, offset)
  offset = out.writeUInt8(cache.normalized ? 1 : 0, offset)
  offset += 7

  for (const value of cache.imageFeatures) {
    offset = out.writeFloatLE(value, offset)
  }
  for (const label of cache.labels) {
    offset = out.writeUInt32LE(label, offset)
  }
  Buffer.from(cache.splitTags.buffer, cache.splitTags.byteOffset, numImages).copy(out, offset)
  offset += numImages
  for (const blob of nameBlobs) {
    offset = out.writeUInt16LE(blob.length, offset)
    blob.copy(out, offset)
    offset += blob.length
  }
  for (const value of cache.classifierWeights) {
    offset = out.writeFloatLE(value, offset)
  }
  return out
}

/** Strict inverse of encodeCache; used by the tests and by consumers
 *  that want to inspect a cache without the Python engine. */
export function decodeCache(blob: Buffer): CacheData {
  if (blob.length < HEADER_SIZE) {
    throw new CacheFormatError(`file is ${blob.length} bytes, smaller than the header`)
  }
  if (blob.toString('ascii', 0, 4) !== MAGIC) {
    throw new CacheFormatError('bad magic bytes')
  }
  const version = blob.readUInt32LE(4)
  if (version !== FORMAT_VERSION) {
    throw new CacheFormatError(`unsupported format version ${version}`)
  }
  const dim = blob.readUInt32LE(8)
  const numImages = Number(blob.readBigUInt64LE(12))
  const numClasses = blob.readUInt32LE(20)
  const normalized = blob.readUInt8(24) === 1

  let offset = HEADER_SIZE
  const need = (bytes: number) => {
    if (offset + bytes > blob.length) {
      throw new CacheFormatError('file truncated')
    }
  }

  need(numImages * dim * 4)
  const imageFeatures = new Float32Array(numImages * dim)
  for (let i = 0; i < imageFeatures.length; i++, offset += 4) {
    imageFeatures[i] = blob.readFloatLE(offset)
  }
  need(numImages * 4)
  const labels = new Uint32Array(numImages)
  for (let i = 0; i < numImages; i++, offset += 4) {
    labels[i] = blob.readUInt32LE(offset)
  }
  need(numImages)
  const splitTags = new Uint8Array(blob.subarray(offset, offset + numImages))
  offset += numImages

  const classNames: string[] = []
  for (let i = 0; i < numClasses; i++) {
    need(2)
    const length = blob.readUInt16LE(offset)
    offset += 2
    need(length)
    classNames.push(blob.toString('utf8', offset, offset + length))
    offset += length
  }

  need(numClasses * dim * 4)
  const classifierWeights = new Float32Array(numClasses * dim)
  for (let i = 0; i < classifierWeights.length; i++, offset += 4) {
    classifierWeights[i] = blob.readFloatLE(offset)
  }

  if (offset !== blob.length) {
    throw new CacheFormatError(`${blob.length - offset} trailing bytes after cache payload`)
  }
  const cache: CacheData = {
    dim, imageFeatures, labels, splitTags, classNames, classifierWeights, normalized,
  }
  checkShape(cache)
  return cache
}
