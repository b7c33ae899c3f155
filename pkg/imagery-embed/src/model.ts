/**
 * Small convolutional backbone producing 512-dim image embeddings.
 *
 * Input tiles are resized to 32x32 RGB, passed through two strided
 * convolutions, and projected to a unit-norm 512-vector. Weights are
 * generated from a fixed seed (see rng.ts) and their SHA-256 checksum is
 * frozen in WEIGHT_CHECKSUM, so any drift in the generator or in weight
 * shapes fails loudly instead of silently changing embeddings.
 */

import * as tf from '@tensorflow/tfjs'
import { createHash } from 'crypto'
import { weightBlock } from './rng'

export const EMBEDDING_DIM = 512
export const INPUT_SIZE = 32

const SEED = 1_234_567

const CONV1 = { kernel: 5, inChannels: 3, outChannels: 16, stride: 2 }
const CONV2 = { kernel: 3, inChannels: 16, outChannels: 32, stride: 2 }
const FLAT = 8 * 8 * CONV2.outChannels // 32x32 -> 16x16 -> 8x8 spatial

/** Frozen digest of the concatenated weight buffers, in allocation order. */
export const WEIGHT_CHECKSUM =
  '1bc34a78482b1509f79231acacdaf9410c60cd456141ff90c1ef97d27d8b8206'

export interface BackboneWeights {
  conv1: Float32Array
  conv2: Float32Array
  projection: Float32Array
}

export function buildWeights(): BackboneWeights {
  const conv1Size = CONV1.kernel * CONV1.kernel * CONV1.inChannels * CONV1.outChannels
  const conv2Size = CONV2.kernel * CONV2.kernel * CONV2.inChannels * CONV2.outChannels
  return {
    conv1: weightBlock(SEED, conv1Size, CONV1.kernel * CONV1.kernel * CONV1.inChannels),
    conv2: weightBlock(SEED + 1, conv2Size, CONV2.kernel * CONV2.kernel * CONV2.inChannels),
    projection: weightBlock(SEED + 2, FLAT * EMBEDDING_DIM, FLAT),
  }
}

export function weightChecksum(weights: BackboneWeights): string {
  const hash = createHash('sha256')
  for (const block of [weights.conv1, weights.conv2, weights.projection]) {
    hash.update(Buffer.from(block.buffer, block.byteOffset, block.byteLength))
  }
  return hash.digest('hex')
}

export class EmbeddingModel {
  private conv1: tf.Tensor4D
  private conv2: tf.Tensor4D
  private projection: tf.Tensor2D

  constructor() {
    const weights = buildWeights()
    const checksum = weightChecksum(weights)
    if (checksum !== WEIGHT_CHECKSUM) {
      throw new Error(
        `backbone weight checksum mismatch: ${checksum} != ${WEIGHT_CHECKSUM}`,
      )
    }
    this.conv1 = tf.tensor4d(weights.conv1, [
      CONV1.kernel,
      CONV1.kernel,
      CONV1.inChannels,
      CONV1.outChannels,
    ])
    this.conv2 = tf.tensor4d(weights.conv2, [
      CONV2.kernel,
      CONV2.kernel,
      CONV2.inChannels,
      CONV2.outChannels,
    ])
    this.projection = tf.tensor2d(weights.projection, [FLAT, EMBEDDING_DIM])
  }

  /**
   * Embed one RGB image given as [height, width, 3] float data in [0, 1].
   * Returns a unit-norm Float32Array of EMBEDDING_DIM values.
   */
  embed(pixels: Float32Array, height: number, width: number): Float32Array {
    const result = tf.tidy(() => {
      const image = tf.tensor3d(pixels, [height, width, 3])
      const resized = tf.image.resizeBilinear(image, [INPUT_SIZE, INPUT_SIZE])
      const centered = resized.sub(0.5).expandDims(0) as tf.Tensor4D
      const h1 = tf.relu(tf.conv2d(centered, this.conv1, CONV1.stride, 'same'))
      const h2 = tf.relu(tf.conv2d(h1, this.conv2, CONV2.stride, 'same'))
      const flat = h2.reshape([1, FLAT]) as tf.Tensor2D
      const projected = tf.matMul(flat, this.projection)
      const norm = tf.norm(projected).clipByValue(1e-12, Infinity)
      return projected.div(norm) as tf.Tensor2D
    })
    const values = result.dataSync() as Float32Array
    result.dispose()
    return Float32Array.from(values)
  }

  dispose(): void {
    this.conv1.dispose()
    this.conv2.dispose()
    this.projection.dispose()
  }
}
