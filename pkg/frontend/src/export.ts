import { maskToPng } from './png.js'
import { rleDecode } from './rle.js'
import type { AnnotationSession } from './session.js'

/**
 * Session export in the training-manifest format: one JSONL record for the
 * image plus one 0/255 mask PNG per accepted instance. Mask pixels are the
 * service's own response bytes (RLE-decoded), so re-ingesting the export
 * reproduces every accepted box exactly.
 */

export interface ExportFile {
  path: string
  bytes: Uint8Array
}

export function exportSession(
  session: AnnotationSession,
  imageBytes: Uint8Array,
): ExportFile[] {
  const accepted = session.accepted()
  if (accepted.length === 0) {
    throw new Error('nothing to export: no accepted instances')
  }
  const stem = session.imageName.replace(/\.[^.]*$/, '') || 'image'
  const files: ExportFile[] = [{ path: session.imageName, bytes: imageBytes }]
  const instances: Array<{ class: string | null; mask_path: string }> = []
  accepted.forEach((instance, index) => {
    if (!instance.mask || !instance.label) {
      throw new Error(`accepted instance ${instance.id} is missing a mask or label`)
    }
    const [height, width] = instance.mask.size
    const maskPath = `masks/${stem}_${index}.png`
    files.push({ path: maskPath, bytes: maskToPng(rleDecode(instance.mask), width, height) })
    instances.push({ class: instance.label, mask_path: maskPath })
  })
  const record = {
    image_path: session.imageName,
    split: 'train',
    instances,
  }
  files.push({
    path: 'manifest.jsonl',
    bytes: new TextEncoder().encode(JSON.stringify(record) + '\n'),
  })
  return files
}
