import type { Box } from './types.js'

/**
 * View transform between image pixels and screen pixels:
 * screen = image * zoom + pan. Boxes live in image coordinates no matter
 * the zoom; only this module converts.
 */
export interface ViewTransform {
  zoom: number
  panX: number
  panY: number
}

export function identityView(): ViewTransform {
  return { zoom: 1, panX: 0, panY: 0 }
}

/** Round half away from zero, matching the backend's pixel convention. */
export function roundHalfAway(value: number): number {
  return Math.sign(value) * Math.floor(Math.abs(value) + 0.5)
}

export function imageToScreen(view: ViewTransform, ix: number, iy: number): [number, number] {
  return [ix * view.zoom + view.panX, iy * view.zoom + view.panY]
}

export function screenToImage(view: ViewTransform, sx: number, sy: number): [number, number] {
  return [(sx - view.panX) / view.zoom, (sy - view.panY) / view.zoom]
}

function clamp(value: number, lo: number, hi: number): number {
  return Math.min(Math.max(value, lo), hi)
}

/**
 * Convert a screen-space drag to an image-space box, rounded to pixel
 * indices and clamped to the image. Returns null for a degenerate
 * (zero-extent) result, e.g. a plain click.
 */
export function dragToImageBox(
  view: ViewTransform,
  start: [number, number],
  end: [number, number],
  imageWidth: number,
  imageHeight: number,
): Box | null {
  const [ix0, iy0] = screenToImage(view, start[0], start[1])
  const [ix1, iy1] = screenToImage(view, end[0], end[1])
  const xMin = clamp(roundHalfAway(Math.min(ix0, ix1)), 0, imageWidth - 1)
  const xMax = clamp(roundHalfAway(Math.max(ix0, ix1)), 0, imageWidth - 1)
  const yMin = clamp(roundHalfAway(Math.min(iy0, iy1)), 0, imageHeight - 1)
  const yMax = clamp(roundHalfAway(Math.max(iy0, iy1)), 0, imageHeight - 1)
  if (xMin >= xMax || yMin >= yMax) {
    return null
  }
  return { xMin, yMin, xMax, yMax }
}

/** Zoom about a screen-space anchor so the point under the cursor stays put. */
export function zoomAbout(
  view: ViewTransform,
  factor: number,
  anchorX: number,
  anchorY: number,
): ViewTransform {
  const zoom = clamp(view.zoom * factor, 0.05, 64)
  const scale = zoom / view.zoom
  return {
    zoom,
    panX: anchorX - (anchorX - view.panX) * scale,
    panY: anchorY - (anchorY - view.panY) * scale,
  }
}

export function panBy(view: ViewTransform, dx: number, dy: number): ViewTransform {
  return { ...view, panX: view.panX + dx, panY: view.panY + dy }
}
