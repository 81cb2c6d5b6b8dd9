import { rleDecode } from './rle.js'
import { imageToScreen, type ViewTransform } from './transform.js'
import { CLASS_COLORS, type AnnotationInstance, type Box } from './types.js'

/** Canvas drawing for the annotator; all geometry comes in image space. */

function hexToRgb(hex: string): [number, number, number] {
  return [
    parseInt(hex.slice(1, 3), 16),
    parseInt(hex.slice(3, 5), 16),
    parseInt(hex.slice(5, 7), 16),
  ]
}

const overlayCache = new Map<number, HTMLCanvasElement>()

function maskOverlay(instance: AnnotationInstance): HTMLCanvasElement | null {
  if (!instance.mask) return null
  const cached = overlayCache.get(instance.id)
  if (cached) return cached
  const [height, width] = instance.mask.size
  const pixels = rleDecode(instance.mask)
  const [r, g, b] = hexToRgb(CLASS_COLORS[instance.label ?? 'unlabeled'])
  const rgba = new Uint8ClampedArray(4 * width * height)
  for (let i = 0; i < pixels.length; i++) {
    if (pixels[i]) {
      rgba[4 * i] = r
      rgba[4 * i + 1] = g
      rgba[4 * i + 2] = b
      rgba[4 * i + 3] = 255
    }
  }
  const canvas = document.createElement('canvas')
  canvas.width = width
  canvas.height = height
  canvas.getContext('2d')!.putImageData(new ImageData(rgba, width, height), 0, 0)
  overlayCache.set(instance.id, canvas)
  return canvas
}

export function invalidateOverlay(instanceId: number): void {
  overlayCache.delete(instanceId)
}

function drawBox(
  ctx: CanvasRenderingContext2D,
  view: ViewTransform,
  box: Box,
  color: string,
  dashed = false,
): void {
  const [x0, y0] = imageToScreen(view, box.xMin, box.yMin)
  const [x1, y1] = imageToScreen(view, box.xMax + 1, box.yMax + 1)
  ctx.save()
  ctx.strokeStyle = color
  ctx.lineWidth = 2
  ctx.setLineDash(dashed ? [6, 4] : [])
  ctx.strokeRect(x0, y0, x1 - x0, y1 - y0)
  ctx.restore()
}

export interface Scene {
  image: CanvasImageSource | null
  instances: AnnotationInstance[]
  view: ViewTransform
  maskOpacity: number
  rubberBand: { start: [number, number]; end: [number, number] } | null
  selectedId: number | null
}

export function renderScene(canvas: HTMLCanvasElement, scene: Scene): void {
  const ctx = canvas.getContext('2d')
  if (!ctx) return
  ctx.setTransform(1, 0, 0, 1, 0, 0)
  ctx.fillStyle = '#202228'
  ctx.fillRect(0, 0, canvas.width, canvas.height)
  const { view } = scene
  ctx.imageSmoothingEnabled = view.zoom < 1
  if (scene.image) {
    ctx.setTransform(view.zoom, 0, 0, view.zoom, view.panX, view.panY)
    ctx.drawImage(scene.image, 0, 0)
    ctx.globalAlpha = scene.maskOpacity
    for (const instance of scene.instances) {
      if (instance.status === 'rejected') continue
      const overlay = maskOverlay(instance)
      if (overlay) ctx.drawImage(overlay, 0, 0)
    }
    ctx.globalAlpha = 1
    ctx.setTransform(1, 0, 0, 1, 0, 0)
  }
  for (const instance of scene.instances) {
    if (instance.status === 'rejected') continue
    const color = CLASS_COLORS[instance.label ?? 'unlabeled']
    if (instance.box) {
      drawBox(ctx, view, instance.box, color, instance.id !== scene.selectedId)
    } else {
      drawBox(ctx, view, instance.promptBox, '#cccccc', true)
    }
  }
  if (scene.rubberBand) {
    const { start, end } = scene.rubberBand
    ctx.save()
    ctx.strokeStyle = '#ffffff'
    ctx.setLineDash([4, 4])
    ctx.strokeRect(start[0], start[1], end[0] - start[0], end[1] - start[1])
    ctx.restore()
  }
}
