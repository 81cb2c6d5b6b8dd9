import { SegmentationClient } from './api.js'
import { DragController } from './controller.js'
import { exportSession } from './export.js'
import { invalidateOverlay, renderScene } from './render.js'
import { AnnotationSession } from './session.js'
import { identityView, panBy, zoomAbout } from './transform.js'
import { DISTRESS_CLASSES, type DistressClass } from './types.js'

/** DOM wiring for the annotator page; all logic lives in the other modules. */

const canvas = document.getElementById('viewport') as HTMLCanvasElement
const fileInput = document.getElementById('file-input') as HTMLInputElement
const serviceInput = document.getElementById('service-url') as HTMLInputElement
const opacityInput = document.getElementById('mask-opacity') as HTMLInputElement
const instanceList = document.getElementById('instance-list') as HTMLUListElement
const statusLine = document.getElementById('status-line') as HTMLElement
const exportButton = document.getElementById('export-button') as HTMLButtonElement
const undoButton = document.getElementById('undo-button') as HTMLButtonElement

let client = new SegmentationClient(serviceInput.value.replace(/\/$/, ''))
let session: AnnotationSession | null = null
let controller: DragController | null = null
let image: HTMLImageElement | null = null
let imageBytes: Uint8Array | null = null
let rubberBand: { start: [number, number]; end: [number, number] } | null = null
let selectedId: number | null = null
let panning: { startX: number; startY: number } | null = null

function setStatus(text: string): void {
  statusLine.textContent = text
}

function redraw(): void {
  renderScene(canvas, {
    image,
    instances: session?.instances ?? [],
    view: controller?.view ?? identityView(),
    maskOpacity: Number(opacityInput.value) / 100,
    rubberBand,
    selectedId,
  })
  renderInstanceList()
  exportButton.disabled = !session || session.accepted().length === 0
}

function classPicker(current: DistressClass | null, onPick: (cls: DistressClass) => void) {
  const select = document.createElement('select')
  const placeholder = document.createElement('option')
  placeholder.textContent = 'class…'
  placeholder.disabled = true
  placeholder.selected = current === null
  select.appendChild(placeholder)
  for (const cls of DISTRESS_CLASSES) {
    const option = document.createElement('option')
    option.value = cls
    option.textContent = cls
    option.selected = cls === current
    select.appendChild(option)
  }
  select.addEventListener('change', () => onPick(select.value as DistressClass))
  return select
}

function renderInstanceList(): void {
  instanceList.replaceChildren()
  if (!session || !controller) return
  for (const instance of session.instances) {
    const item = document.createElement('li')
    item.className = `instance ${instance.status}${instance.id === selectedId ? ' selected' : ''}`
    const title = document.createElement('span')
    const score = instance.iouScore === null ? '' : ` iou ${instance.iouScore.toFixed(2)}`
    title.textContent = `#${instance.id} ${instance.status}${score}`
    title.addEventListener('click', () => {
      selectedId = instance.id
      redraw()
    })
    item.appendChild(title)
    item.appendChild(
      classPicker(instance.label, (cls) => {
        session!.relabel(instance.id, cls)
        invalidateOverlay(instance.id)
        redraw()
      }),
    )
    const accept = document.createElement('button')
    accept.textContent = 'accept'
    accept.disabled = instance.status === 'accepted' || !instance.mask || !instance.label
    accept.addEventListener('click', () => {
      session!.accept(instance.id)
      redraw()
    })
    item.appendChild(accept)
    const reject = document.createElement('button')
    reject.textContent = 'reject'
    reject.addEventListener('click', () => {
      session!.reject(instance.id)
      redraw()
    })
    item.appendChild(reject)
    if (instance.error) {
      const retry = document.createElement('button')
      retry.textContent = 'retry'
      retry.addEventListener('click', () => controller!.retry(instance.id))
      item.appendChild(retry)
      const err = document.createElement('em')
      err.textContent = ` ${instance.error}`
      item.appendChild(err)
    }
    instanceList.appendChild(item)
  }
}

fileInput.addEventListener('change', async () => {
  const file = fileInput.files?.[0]
  if (!file) return
  client = new SegmentationClient(serviceInput.value.replace(/\/$/, ''))
  imageBytes = new Uint8Array(await file.arrayBuffer())
  setStatus('encoding image on the service…')
  try {
    const upload = await client.uploadImage(imageBytes, file.name)
    session = new AnnotationSession(upload.imageId, file.name, upload.width, upload.height)
    controller = new DragController(session, client, identityView(), redraw)
    image = new Image()
    image.onload = redraw
    image.src = URL.createObjectURL(file)
    setStatus(`ready: ${file.name} (${upload.width}x${upload.height}), drag a box over a distress`)
  } catch (error) {
    setStatus(`upload failed: ${error}`)
  }
})

canvas.addEventListener('pointerdown', (event) => {
  if (!controller) return
  if (event.button === 1 || event.shiftKey) {
    panning = { startX: event.offsetX, startY: event.offsetY }
    return
  }
  controller.pointerDown(event.offsetX, event.offsetY)
})

canvas.addEventListener('pointermove', (event) => {
  if (!controller) return
  if (panning) {
    controller.view = panBy(
      controller.view,
      event.offsetX - panning.startX,
      event.offsetY - panning.startY,
    )
    panning = { startX: event.offsetX, startY: event.offsetY }
    redraw()
    return
  }
  rubberBand = controller.dragPreview(event.offsetX, event.offsetY)
  if (rubberBand) redraw()
})

canvas.addEventListener('pointerup', (event) => {
  if (!controller) return
  if (panning) {
    panning = null
    return
  }
  rubberBand = null
  const id = controller.pointerUp(event.offsetX, event.offsetY)
  if (id !== null) {
    selectedId = id
    setStatus(`segmenting instance #${id}…`)
  }
  redraw()
})

canvas.addEventListener('wheel', (event) => {
  if (!controller) return
  event.preventDefault()
  const factor = event.deltaY < 0 ? 1.2 : 1 / 1.2
  controller.view = zoomAbout(controller.view, factor, event.offsetX, event.offsetY)
  redraw()
})

undoButton.addEventListener('click', () => {
  if (session?.undo()) {
    session.instances.forEach((inst) => invalidateOverlay(inst.id))
    redraw()
  }
})

opacityInput.addEventListener('input', redraw)

exportButton.addEventListener('click', () => {
  if (!session || !imageBytes) return
  try {
    for (const file of exportSession(session, imageBytes)) {
      const anchor = document.createElement('a')
      anchor.href = URL.createObjectURL(new Blob([file.bytes as BlobPart]))
      anchor.download = file.path.replace(/\//g, '__')
      anchor.click()
      URL.revokeObjectURL(anchor.href)
    }
    setStatus(`exported ${session.accepted().length} accepted instances`)
  } catch (error) {
    setStatus(`export blocked: ${error}`)
  }
})

function resize(): void {
  canvas.width = canvas.clientWidth
  canvas.height = canvas.clientHeight
  redraw()
}
window.addEventListener('resize', resize)
resize()
setStatus('pick an image to begin')
