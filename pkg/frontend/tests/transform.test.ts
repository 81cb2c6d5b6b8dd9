import { describe, expect, it } from 'vitest'

import {
  dragToImageBox,
  identityView,
  imageToScreen,
  panBy,
  roundHalfAway,
  screenToImage,
  zoomAbout,
  type ViewTransform,
} from '../src/transform.js'

describe('roundHalfAway', () => {
  it('rounds half away from zero', () => {
    expect(roundHalfAway(0.5)).toBe(1)
    expect(roundHalfAway(1.5)).toBe(2)
    expect(roundHalfAway(-0.5)).toBe(-1)
    expect(roundHalfAway(2.4)).toBe(2)
  })
})

describe('coordinate round trips', () => {
  const views: ViewTransform[] = [
    identityView(),
    { zoom: 2, panX: 37, panY: -12 },
    { zoom: 0.5, panX: -8, panY: 101 },
    { zoom: 3.7, panX: 0.25, panY: 9.5 },
  ]

  it('screen -> image -> screen is exact in floats', () => {
    for (const view of views) {
      for (const [sx, sy] of [[0, 0], [123, 45], [7.5, 991]] as Array<[number, number]>) {
        const [ix, iy] = screenToImage(view, sx, sy)
        const [bx, by] = imageToScreen(view, ix, iy)
        expect(bx).toBeCloseTo(sx, 9)
        expect(by).toBeCloseTo(sy, 9)
      }
    }
  })

  it('integer-pixel drags map within 1 image pixel at every zoom', () => {
    // ground-truth image points pushed through the view, quantized to the
    // integer screen grid (real pointers), then mapped back
    for (const view of views) {
      for (let trial = 0; trial < 50; trial++) {
        const ix = (trial * 13) % 400
        const iy = (trial * 29) % 300
        const [sx, sy] = imageToScreen(view, ix, iy)
        const [rx, ry] = screenToImage(view, Math.round(sx), Math.round(sy))
        expect(Math.abs(roundHalfAway(rx) - ix)).toBeLessThanOrEqual(1)
        expect(Math.abs(roundHalfAway(ry) - iy)).toBeLessThanOrEqual(1)
      }
    }
  })
})

describe('dragToImageBox', () => {
  it('orders corners and clamps to the image', () => {
    const box = dragToImageBox(identityView(), [50, 40], [10, 90], 64, 64)
    expect(box).toEqual({ xMin: 10, yMin: 40, xMax: 50, yMax: 63 })
  })

  it('discards zero-area drags', () => {
    expect(dragToImageBox(identityView(), [10, 10], [10, 10], 64, 64)).toBeNull()
    expect(dragToImageBox(identityView(), [10, 10], [10, 30], 64, 64)).toBeNull() // zero width
  })

  it('accounts for zoom and pan', () => {
    const view: ViewTransform = { zoom: 2, panX: 100, panY: 50 }
    const box = dragToImageBox(view, [120, 70], [160, 110], 200, 200)
    expect(box).toEqual({ xMin: 10, yMin: 10, xMax: 30, yMax: 30 })
  })
})

describe('zoomAbout / panBy', () => {
  it('keeps the anchor point stationary', () => {
    let view = identityView()
    const [ix, iy] = screenToImage(view, 200, 150)
    view = zoomAbout(view, 2, 200, 150)
    const [ix2, iy2] = screenToImage(view, 200, 150)
    expect(ix2).toBeCloseTo(ix, 9)
    expect(iy2).toBeCloseTo(iy, 9)
  })

  it('pan shifts the offset only', () => {
    const view = panBy({ zoom: 2, panX: 5, panY: 6 }, 10, -3)
    expect(view).toEqual({ zoom: 2, panX: 15, panY: 3 })
  })
})
