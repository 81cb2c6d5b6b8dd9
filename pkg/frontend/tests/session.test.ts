import { describe, expect, it } from 'vitest'

import { exportSession } from '../src/export.js'
import { rleEncode } from '../src/rle.js'
import { AnnotationSession } from '../src/session.js'
import type { Box, RleMask } from '../src/types.js'

const PROMPT: Box = { xMin: 2, yMin: 3, xMax: 30, yMax: 25 }

function maskWithBlock(
  height: number,
  width: number,
  box: Box,
): { mask: RleMask; pixels: Uint8Array } {
  const pixels = new Uint8Array(height * width)
  for (let y = box.yMin; y <= box.yMax; y++) {
    for (let x = box.xMin; x <= box.xMax; x++) {
      pixels[y * width + x] = 1
    }
  }
  return { mask: rleEncode(pixels, height, width), pixels }
}

function sessionWithInstance(): { session: AnnotationSession; id: number } {
  const session = new AnnotationSession('img-id', 'road.png', 40, 32)
  const instance = session.addPending(PROMPT)
  const { mask } = maskWithBlock(32, 40, { xMin: 5, yMin: 6, xMax: 20, yMax: 18 })
  session.attachMask(instance.id, mask, 0.9)
  return { session, id: instance.id }
}

describe('AnnotationSession', () => {
  it('attachMask stores the tight box of the returned mask', () => {
    const { session, id } = sessionWithInstance()
    expect(session.get(id).box).toEqual({ xMin: 5, yMin: 6, xMax: 20, yMax: 18 })
    expect(session.get(id).promptBox).toEqual(PROMPT)
    expect(session.get(id).iouScore).toBe(0.9)
  })

  it('accept requires a mask and a class label', () => {
    const session = new AnnotationSession('img', 'a.png', 8, 8)
    const bare = session.addPending(PROMPT)
    expect(() => session.accept(bare.id, 'patch')).toThrow(/without a mask/)

    const { session: ready, id } = sessionWithInstance()
    expect(() => ready.accept(id)).toThrow(/without a class label/)
    ready.accept(id, 'manhole')
    expect(ready.get(id).status).toBe('accepted')
    expect(ready.get(id).label).toBe('manhole')
  })

  it('reject excludes from accepted(); undo restores pending', () => {
    const { session, id } = sessionWithInstance()
    session.reject(id)
    expect(session.get(id).status).toBe('rejected')
    expect(session.accepted()).toHaveLength(0)
    expect(session.undo()).toBe(true)
    expect(session.get(id).status).toBe('pending')
  })

  it('relabel persists and survives accept', () => {
    const { session, id } = sessionWithInstance()
    session.relabel(id, 'manhole')
    session.accept(id)
    expect(session.get(id).label).toBe('manhole')
  })

  it('service errors keep the box for retry', () => {
    const session = new AnnotationSession('img', 'a.png', 40, 32)
    const instance = session.addPending(PROMPT)
    session.attachError(instance.id, 'boom')
    expect(session.get(instance.id).error).toBe('boom')
    expect(session.get(instance.id).promptBox).toEqual(PROMPT)
    expect(session.get(instance.id).status).toBe('pending')
  })
})

describe('exportSession', () => {
  it('is blocked with no accepted instances', () => {
    const { session } = sessionWithInstance()
    expect(() => exportSession(session, new Uint8Array([1]))).toThrow(/no accepted/)
  })

  it('emits image, one mask per accepted instance, and a manifest record', () => {
    const { session, id } = sessionWithInstance()
    session.accept(id, 'patch')
    const second = session.addPending({ xMin: 22, yMin: 2, xMax: 38, yMax: 12 })
    const { mask } = maskWithBlock(32, 40, { xMin: 24, yMin: 3, xMax: 36, yMax: 10 })
    session.attachMask(second.id, mask, 0.7)
    session.accept(second.id, 'longitudinal')
    const rejected = session.addPending(PROMPT)
    session.reject(rejected.id)

    const files = exportSession(session, new Uint8Array([9, 9, 9]))
    const paths = files.map((f) => f.path)
    expect(paths).toEqual(['road.png', 'masks/road_0.png', 'masks/road_1.png', 'manifest.jsonl'])
    const manifest = JSON.parse(new TextDecoder().decode(files[3].bytes))
    expect(manifest.image_path).toBe('road.png')
    expect(manifest.instances).toEqual([
      { class: 'patch', mask_path: 'masks/road_0.png' },
      { class: 'longitudinal', mask_path: 'masks/road_1.png' },
    ])
  })
})
