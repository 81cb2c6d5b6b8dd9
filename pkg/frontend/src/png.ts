/**
 * Minimal deterministic PNG writer (no compression: zlib stored blocks).
 *
 * Canvas toBlob() output differs across browsers, which would break the
 * byte-stability contract for exported masks; this writer always produces
 * the same bytes for the same pixels, and every PNG reader can open it.
 */

const SIGNATURE = new Uint8Array([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a])

const CRC_TABLE = (() => {
  const table = new Uint32Array(256)
  for (let n = 0; n < 256; n++) {
    let c = n
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1
    }
    table[n] = c >>> 0
  }
  return table
})()

function crc32(...parts: Uint8Array[]): number {
  let c = 0xffffffff
  for (const part of parts) {
    for (let i = 0; i < part.length; i++) {
      c = CRC_TABLE[(c ^ part[i]) & 0xff] ^ (c >>> 8)
    }
  }
  return (c ^ 0xffffffff) >>> 0
}

function adler32(data: Uint8Array): number {
  let a = 1
  let b = 0
  for (let i = 0; i < data.length; i++) {
    a = (a + data[i]) % 65521
    b = (b + a) % 65521
  }
  return ((b << 16) | a) >>> 0
}

function u32be(value: number): Uint8Array {
  return new Uint8Array([(value >>> 24) & 0xff, (value >>> 16) & 0xff, (value >>> 8) & 0xff, value & 0xff])
}

function concat(parts: Uint8Array[]): Uint8Array {
  const total = parts.reduce((n, p) => n + p.length, 0)
  const out = new Uint8Array(total)
  let offset = 0
  for (const part of parts) {
    out.set(part, offset)
    offset += part.length
  }
  return out
}

function chunk(type: string, data: Uint8Array): Uint8Array {
  const typeBytes = new TextEncoder().encode(type)
  return concat([u32be(data.length), typeBytes, data, u32be(crc32(typeBytes, data))])
}

/** zlib stream with stored (uncompressed) deflate blocks. */
function zlibStored(raw: Uint8Array): Uint8Array {
  const parts: Uint8Array[] = [new Uint8Array([0x78, 0x01])]
  const blockSize = 65535
  for (let offset = 0; offset < raw.length || offset === 0; offset += blockSize) {
    const slice = raw.subarray(offset, Math.min(offset + blockSize, raw.length))
    const final = offset + blockSize >= raw.length ? 1 : 0
    const len = slice.length
    parts.push(
      new Uint8Array([final, len & 0xff, (len >>> 8) & 0xff, ~len & 0xff, (~len >>> 8) & 0xff]),
      slice,
    )
    if (final) break
  }
  parts.push(u32be(adler32(raw)))
  return concat(parts)
}

function encodePng(pixels: Uint8Array, width: number, height: number, channels: 1 | 3): Uint8Array {
  if (pixels.length !== width * height * channels) {
    throw new Error(`pixel buffer length ${pixels.length} != ${width}x${height}x${channels}`)
  }
  const ihdr = concat([
    u32be(width),
    u32be(height),
    new Uint8Array([8, channels === 1 ? 0 : 2, 0, 0, 0]),
  ])
  const stride = width * channels
  const raw = new Uint8Array((stride + 1) * height)
  for (let y = 0; y < height; y++) {
    raw[y * (stride + 1)] = 0 // filter: none
    raw.set(pixels.subarray(y * stride, (y + 1) * stride), y * (stride + 1) + 1)
  }
  return concat([
    SIGNATURE,
    chunk('IHDR', ihdr),
    chunk('IDAT', zlibStored(raw)),
    chunk('IEND', new Uint8Array(0)),
  ])
}

/** {0,1} mask to an 8-bit grayscale PNG with foreground 255. */
export function maskToPng(mask: Uint8Array, width: number, height: number): Uint8Array {
  const bytes = new Uint8Array(mask.length)
  for (let i = 0; i < mask.length; i++) {
    bytes[i] = mask[i] ? 255 : 0
  }
  return encodePng(bytes, width, height, 1)
}

/** Row-major RGB bytes to a PNG (used by tests to build uploads). */
export function rgbToPng(pixels: Uint8Array, width: number, height: number): Uint8Array {
  return encodePng(pixels, width, height, 3)
}
