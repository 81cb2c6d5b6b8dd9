/** Pixel-space box in original-image coordinates, corners inclusive. */
export interface Box {
  xMin: number
  yMin: number
  xMax: number
  yMax: number
}

export const DISTRESS_CLASSES = [
  'transverse',
  'longitudinal',
  'alligator',
  'block',
  'patch',
  'manhole',
] as const

export type DistressClass = (typeof DISTRESS_CLASSES)[number]

/** Overlay colors per class (thin cracks vanish under opaque fills, so the
 *  renderer applies these at adjustable opacity). */
export const CLASS_COLORS: Record<DistressClass | 'unlabeled', string> = {
  transverse: '#e6194b',
  longitudinal: '#3cb44b',
  alligator: '#ffe119',
  block: '#4363d8',
  patch: '#f58231',
  manhole: '#911eb4',
  unlabeled: '#808080',
}

/** Run-length encoded binary mask as the service returns it. */
export interface RleMask {
  size: [number, number] // [height, width]
  counts: number[]
}

export type InstanceStatus = 'pending' | 'accepted' | 'rejected'

export interface AnnotationInstance {
  id: number
  /** The box the user dragged, kept for redraw/retry. */
  promptBox: Box
  /** Tight box of the returned mask; this is what exports carry. */
  box: Box | null
  mask: RleMask | null
  iouScore: number | null
  label: DistressClass | null
  status: InstanceStatus
  error: string | null
}

export function boxAsArray(box: Box): [number, number, number, number] {
  return [box.xMin, box.yMin, box.xMax, box.yMax]
}

export function boxWidth(box: Box): number {
  return box.xMax - box.xMin + 1
}

export function boxHeight(box: Box): number {
  return box.yMax - box.yMin + 1
}
