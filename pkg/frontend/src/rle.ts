import type { Box, RleMask } from './types.js'

/**
 * Decode the service's run-length format: row-major alternating run
 * lengths starting with the zero run. Returns a {0,1} byte mask.
 */
export function rleDecode(mask: RleMask): Uint8Array {
  const [height, width] = mask.size
  const total = height * width
  const out = new Uint8Array(total)
  let position = 0
  let value = 0
  for (const run of mask.counts) {
    if (value === 1) {
      out.fill(1, position, position + run)
    }
    position += run
    value ^= 1
  }
  if (position !== total) {
    throw new Error(`run lengths sum to ${position}, expected ${total}`)
  }
  return out
}

export function rleEncode(pixels: Uint8Array, height: number, width: number): RleMask {
  if (pixels.length !== height * width) {
    throw new Error(`mask length ${pixels.length} != ${height}x${width}`)
  }
  const counts: number[] = []
  let value = 0
  let run = 0
  for (let i = 0; i < pixels.length; i++) {
    const pixel = pixels[i] ? 1 : 0
    if (pixel === value) {
      run += 1
    } else {
      counts.push(run)
      value = pixel
      run = 1
    }
  }
  counts.push(run)
  return { size: [height, width], counts }
}

/** Tight box over foreground pixels; null when the mask is empty. */
export function maskTightBox(pixels: Uint8Array, height: number, width: number): Box | null {
  let xMin = width
  let yMin = height
  let xMax = -1
  let yMax = -1
  for (let y = 0; y < height; y++) {
    const row = y * width
    for (let x = 0; x < width; x++) {
      if (pixels[row + x]) {
        if (x < xMin) xMin = x
        if (x > xMax) xMax = x
        if (y < yMin) yMin = y
        if (y > yMax) yMax = y
      }
    }
  }
  if (xMax < 0) {
    return null
  }
  return { xMin, yMin, xMax, yMax }
}
