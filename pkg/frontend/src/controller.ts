import { ServiceError } from './api.js'
import type { AnnotationSession } from './session.js'
import { dragToImageBox, type ViewTransform } from './transform.js'
import { boxAsArray, type RleMask } from './types.js'

/** The one service call the controller needs (structural, easy to fake). */
export interface BoxSegmenter {
  segmentBox(
    imageId: string,
    box: [number, number, number, number],
    threshold?: number,
  ): Promise<{ mask: RleMask; iouScore: number }>
}

/**
 * Box-drag gesture state machine. A completed drag converts to an
 * image-space box through the view transform and issues exactly one
 * segmentation request; zero-area drags (clicks) are discarded. At most
 * one request is in flight; later drags queue behind it.
 */
export class DragController {
  private dragStart: [number, number] | null = null
  private queue: Promise<void> = Promise.resolve()
  requestCount = 0

  constructor(
    private readonly session: AnnotationSession,
    private readonly client: BoxSegmenter,
    public view: ViewTransform,
    private readonly onUpdate: () => void = () => {},
    public threshold = 0.5,
  ) {}

  pointerDown(sx: number, sy: number): void {
    this.dragStart = [sx, sy]
  }

  /** Live rectangle for rubber-band rendering; null when not dragging. */
  dragPreview(sx: number, sy: number): { start: [number, number]; end: [number, number] } | null {
    if (!this.dragStart) return null
    return { start: this.dragStart, end: [sx, sy] }
  }

  /**
   * Finish the drag. Returns the pending instance id when a request was
   * issued, or null for a discarded degenerate gesture.
   */
  pointerUp(sx: number, sy: number): number | null {
    if (!this.dragStart) return null
    const start = this.dragStart
    this.dragStart = null
    const box = dragToImageBox(this.view, start, [sx, sy], this.session.width, this.session.height)
    if (box === null) {
      return null // click, not a drag
    }
    const instance = this.session.addPending(box)
    this.enqueue(instance.id, boxAsArray(box))
    return instance.id
  }

  /** Re-issue the request for an instance whose call failed. */
  retry(instanceId: number): void {
    const instance = this.session.get(instanceId)
    this.enqueue(instanceId, boxAsArray(instance.promptBox))
  }

  /** Resolves when every queued segmentation request has settled. */
  idle(): Promise<void> {
    return this.queue
  }

  private enqueue(instanceId: number, box: [number, number, number, number]): void {
    this.queue = this.queue.then(async () => {
      this.requestCount += 1
      try {
        const { mask, iouScore } = await this.client.segmentBox(
          this.session.imageId,
          box,
          this.threshold,
        )
        this.session.attachMask(instanceId, mask, iouScore)
      } catch (error) {
        const message =
          error instanceof ServiceError ? `${error.code}: ${error.message}` : String(error)
        this.session.attachError(instanceId, message)
      }
      this.onUpdate()
    })
  }
}
