import { maskTightBox, rleDecode } from './rle.js'
import type { AnnotationInstance, Box, DistressClass, RleMask } from './types.js'

/**
 * One image's annotation state: instances with their masks, triage status,
 * and class labels. Boxes are stored in original-image coordinates
 * regardless of zoom; an accepted instance always has exactly one mask and
 * one class label. Mutations push onto an undo stack.
 */
export class AnnotationSession {
  readonly imageId: string
  readonly imageName: string
  readonly width: number
  readonly height: number
  instances: AnnotationInstance[] = []
  dirty = false

  private nextId = 1
  private undoStack: AnnotationInstance[][] = []
  private readonly undoLimit = 100

  constructor(imageId: string, imageName: string, width: number, height: number) {
    this.imageId = imageId
    this.imageName = imageName
    this.width = width
    this.height = height
  }

  private snapshot(): void {
    this.undoStack.push(this.instances.map((inst) => ({ ...inst })))
    if (this.undoStack.length > this.undoLimit) {
      this.undoStack.shift()
    }
    this.dirty = true
  }

  undo(): boolean {
    const previous = this.undoStack.pop()
    if (!previous) return false
    this.instances = previous
    return true
  }

  get(id: number): AnnotationInstance {
    const instance = this.instances.find((inst) => inst.id === id)
    if (!instance) throw new Error(`no instance ${id}`)
    return instance
  }

  addPending(promptBox: Box): AnnotationInstance {
    this.snapshot()
    const instance: AnnotationInstance = {
      id: this.nextId++,
      promptBox,
      box: null,
      mask: null,
      iouScore: null,
      label: null,
      status: 'pending',
      error: null,
    }
    this.instances.push(instance)
    return instance
  }

  /** Store a returned mask; the instance's box becomes the mask's tight box. */
  attachMask(id: number, mask: RleMask, iouScore: number): void {
    const instance = this.get(id)
    const tight = maskTightBox(rleDecode(mask), mask.size[0], mask.size[1])
    this.snapshot()
    this.replace(id, {
      ...instance,
      mask,
      iouScore,
      box: tight,
      error: tight === null ? 'service returned an empty mask' : null,
    })
  }

  attachError(id: number, message: string): void {
    const instance = this.get(id)
    this.snapshot()
    // box retained so the request can be retried
    this.replace(id, { ...instance, error: message })
  }

  accept(id: number, label?: DistressClass): void {
    const instance = this.get(id)
    const finalLabel = label ?? instance.label
    if (!instance.mask || !instance.box) {
      throw new Error('cannot accept an instance without a mask')
    }
    if (!finalLabel) {
      throw new Error('cannot accept an instance without a class label')
    }
    this.snapshot()
    this.replace(id, { ...instance, label: finalLabel, status: 'accepted' })
  }

  reject(id: number): void {
    const instance = this.get(id)
    this.snapshot()
    this.replace(id, { ...instance, status: 'rejected' })
  }

  relabel(id: number, label: DistressClass): void {
    const instance = this.get(id)
    this.snapshot()
    this.replace(id, { ...instance, label })
  }

  remove(id: number): void {
    this.get(id)
    this.snapshot()
    this.instances = this.instances.filter((inst) => inst.id !== id)
  }

  accepted(): AnnotationInstance[] {
    return this.instances.filter((inst) => inst.status === 'accepted')
  }

  private replace(id: number, updated: AnnotationInstance): void {
    this.instances = this.instances.map((inst) => (inst.id === id ? updated : inst))
  }
}
