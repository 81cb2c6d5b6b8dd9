import type { RleMask } from './types.js'

/** Thin client for the segmentation service; no model code in the browser. */

export interface UploadResult {
  imageId: string
  width: number
  height: number
  cached: boolean
}

export interface SegmentResult {
  masks: Array<
    | { box: number[]; format: 'rle'; size: [number, number]; counts: number[] }
    | { box: number[]; error: { code: string; message: string } }
  >
  iouScores: Array<number | null>
}

export class ServiceError extends Error {
  constructor(
    readonly code: string,
    message: string,
  ) {
    super(message)
  }
}

async function parseError(response: Response): Promise<never> {
  let code = `http_${response.status}`
  let message = response.statusText
  try {
    const payload = await response.json()
    if (payload?.error) {
      code = payload.error.code
      message = payload.error.message
    }
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ServiceError(code, message)
}

export class SegmentationClient {
  constructor(readonly baseUrl: string) {}

  async health(): Promise<{ status: string; kind: string; configHash: string }> {
    const response = await fetch(`${this.baseUrl}/health`)
    if (!response.ok) await parseError(response)
    const payload = await response.json()
    return { status: payload.status, kind: payload.kind, configHash: payload.config_hash }
  }

  async uploadImage(bytes: Uint8Array | Blob, name = 'image.png'): Promise<UploadResult> {
    const form = new FormData()
    const blob = bytes instanceof Blob ? bytes : new Blob([bytes as BlobPart], { type: 'image/png' })
    form.append('file', blob, name)
    const response = await fetch(`${this.baseUrl}/images`, { method: 'POST', body: form })
    if (!response.ok) await parseError(response)
    const payload = await response.json()
    return {
      imageId: payload.image_id,
      width: payload.width,
      height: payload.height,
      cached: payload.cached,
    }
  }

  async segment(
    imageId: string,
    boxes: Array<[number, number, number, number]>,
    threshold = 0.5,
  ): Promise<SegmentResult> {
    const response = await fetch(`${this.baseUrl}/segment`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ image_id: imageId, boxes, threshold, format: 'rle' }),
    })
    if (!response.ok) await parseError(response)
    const payload = await response.json()
    return { masks: payload.masks, iouScores: payload.iou_scores }
  }

  /** Single-box convenience returning the mask or throwing ServiceError. */
  async segmentBox(
    imageId: string,
    box: [number, number, number, number],
    threshold = 0.5,
  ): Promise<{ mask: RleMask; iouScore: number }> {
    const result = await this.segment(imageId, [box], threshold)
    const entry = result.masks[0]
    if ('error' in entry) {
      throw new ServiceError(entry.error.code, entry.error.message)
    }
    return {
      mask: { size: entry.size, counts: entry.counts },
      iouScore: result.iouScores[0] ?? 0,
    }
  }
}
