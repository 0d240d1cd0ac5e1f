// DOM wiring for the annotation loop: seed box on the image, label the
// front/side pseudo-views step by step, watch the wireframe refine,
// export. Keyboard: Enter submits both rects, "a" runs auto.

import { ApiClient, RectArray } from './api.js';
import { drawWireframe } from './overlay.js';
import { CanvasBounds, dragToRect, pointerToPixel, Rect, rectToArray } from './rect.js';
import { FrustumPanel, SessionController } from './session.js';

const api = new ApiClient('');
const controller = new SessionController(api);

const el = <T extends HTMLElement>(id: string): T => {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
};

const manifestInput = el<HTMLInputElement>('manifest-path');
const classInput = el<HTMLInputElement>('class-label');
const openBtn = el<HTMLButtonElement>('open-session');
const exportBtn = el<HTMLButtonElement>('export-session');
const statusLine = el<HTMLDivElement>('status-line');
const imageCanvas = el<HTMLCanvasElement>('image-canvas');
const panelsRoot = el<HTMLDivElement>('panels');

let baseImage: HTMLImageElement | null = null;

interface DragState {
  canvas: HTMLCanvasElement;
  imageW: number;
  imageH: number;
  start: { u: number; v: number };
  rect: Rect | null;
  redraw: (rect: Rect | null) => void;
  done: (rect: Rect | null) => void;
}

let drag: DragState | null = null;

function bounds(canvas: HTMLCanvasElement): CanvasBounds {
  const r = canvas.getBoundingClientRect();
  return { left: r.left, top: r.top, width: r.width, height: r.height };
}

function attachRubberBand(
  canvas: HTMLCanvasElement,
  imageW: number,
  imageH: number,
  redraw: (rect: Rect | null) => void,
  done: (rect: Rect | null) => void,
): void {
  canvas.onpointerdown = (ev) => {
    canvas.setPointerCapture(ev.pointerId);
    const start = pointerToPixel(ev.clientX, ev.clientY, bounds(canvas), imageW, imageH);
    drag = { canvas, imageW, imageH, start, rect: null, redraw, done };
  };
  canvas.onpointermove = (ev) => {
    if (!drag || drag.canvas !== canvas) return;
    const cur = pointerToPixel(ev.clientX, ev.clientY, bounds(canvas), imageW, imageH);
    drag.rect = dragToRect(drag.start, cur);
    drag.redraw(drag.rect);
  };
  canvas.onpointerup = (ev) => {
    if (!drag || drag.canvas !== canvas) return;
    const cur = pointerToPixel(ev.clientX, ev.clientY, bounds(canvas), imageW, imageH);
    const rect = dragToRect(drag.start, cur);   // null -> rejected, no request
    const finish = drag.done;
    drag = null;
    finish(rect);
  };
}

function strokeRect(ctx: CanvasRenderingContext2D, rect: Rect, color: string): void {
  ctx.strokeStyle = color;
  ctx.lineWidth = 1.5;
  ctx.strokeRect(rect.u0, rect.v0, rect.u1 - rect.u0, rect.v1 - rect.v0);
}

function redrawImage(): void {
  const ctx = imageCanvas.getContext('2d');
  if (!ctx || !baseImage) return;
  ctx.clearRect(0, 0, imageCanvas.width, imageCanvas.height);
  ctx.drawImage(baseImage, 0, 0);
  const intr = controller.state.intrinsics;
  if (intr) {
    for (const panel of controller.state.panels) {
      if (panel.box) {
        drawWireframe(ctx, panel.box, intr,
          panel.phase === 'converged' ? '#27e06a' : '#f0c030');
      }
    }
  }
}

const pendingRects = new Map<string, { front?: Rect; side?: Rect }>();

function viewCanvasId(panelId: string, kind: string): string {
  return `view-${panelId}-${kind}`;
}

function renderPanels(): void {
  panelsRoot.textContent = '';
  for (const panel of controller.state.panels) {
    panelsRoot.appendChild(buildPanel(panel));
  }
  redrawImage();
}

function buildPanel(panel: FrustumPanel): HTMLElement {
  const root = document.createElement('div');
  root.className = `panel ${panel.phase}`;
  const head = document.createElement('div');
  head.className = 'panel-head';
  const badge = panel.phase === 'converged'
    ? '<span class="badge converged" data-badge="converged">converged</span>'
    : panel.phase === 'failed'
      ? '<span class="badge failed">failed</span>'
      : `<span class="badge">step ${panel.step}</span>`;
  head.innerHTML = `<b>${panel.cls}</b> · ${panel.id} ${badge}`;
  root.appendChild(head);

  if (panel.hint) {
    const hint = document.createElement('div');
    hint.className = 'hint';
    hint.textContent = panel.hint;
    root.appendChild(hint);
  }

  if (panel.phase === 'awaiting_labels') {
    const row = document.createElement('div');
    row.className = 'views';
    for (const view of panel.views) {
      const cell = document.createElement('div');
      cell.innerHTML = `<div class="view-kind">${view.kind}</div>`;
      const canvas = document.createElement('canvas');
      canvas.id = viewCanvasId(panel.id, view.kind);
      canvas.width = view.width;
      canvas.height = view.height;
      canvas.className = 'view-canvas';
      cell.appendChild(canvas);
      row.appendChild(cell);
      const img = new Image();
      img.onload = () => {
        const ctx = canvas.getContext('2d');
        if (!ctx) return;
        const repaint = (rect: Rect | null) => {
          ctx.drawImage(img, 0, 0);
          const stash = pendingRects.get(panel.id) ?? {};
          const chosen = rect ?? (view.kind === 'front' ? stash.front : stash.side);
          if (chosen) strokeRect(ctx, chosen, '#4aa3ff');
        };
        repaint(null);
        attachRubberBand(canvas, view.width, view.height, repaint, (rect) => {
          if (!rect) { repaint(null); return; }
          const stash = pendingRects.get(panel.id) ?? {};
          if (view.kind === 'front') stash.front = rect; else stash.side = rect;
          pendingRects.set(panel.id, stash);
          repaint(rect);
        });
      };
      img.src = view.url;
    }
    root.appendChild(row);

    const actions = document.createElement('div');
    actions.className = 'actions';
    const submit = document.createElement('button');
    submit.textContent = 'submit labels (Enter)';
    submit.disabled = panel.pending;
    submit.onclick = () => submitPanel(panel.id);
    const auto = document.createElement('button');
    auto.textContent = 'auto (a)';
    auto.disabled = panel.pending;
    auto.onclick = () => runAuto(panel.id);
    actions.append(submit, auto);
    root.appendChild(actions);
  }
  return root;
}

async function submitPanel(panelId: string): Promise<void> {
  const stash = pendingRects.get(panelId);
  if (!stash?.front || !stash?.side) {
    setStatus('draw both front and side rectangles first');
    return;
  }
  const front = rectToArray(stash.front) as RectArray;
  const side = rectToArray(stash.side) as RectArray;
  pendingRects.delete(panelId);
  try {
    await controller.submitLabels(panelId, front, side);
  } catch {
    // hint already recorded on the panel; local rects dropped so the
    // user redraws against the same (unchanged) views
  }
}

async function runAuto(panelId: string): Promise<void> {
  try {
    await controller.auto(panelId);
  } catch {
    // hint shown via panel state
  }
}

function setStatus(text: string): void {
  statusLine.textContent = text;
}

openBtn.onclick = async () => {
  try {
    await controller.open({ path: manifestInput.value.trim() });
    const img = new Image();
    img.onload = () => {
      baseImage = img;
      imageCanvas.width = img.naturalWidth;
      imageCanvas.height = img.naturalHeight;
      redrawImage();
      attachRubberBand(imageCanvas, img.naturalWidth, img.naturalHeight,
        (rect) => {
          redrawImage();
          const ctx = imageCanvas.getContext('2d');
          if (ctx && rect) strokeRect(ctx, rect, '#ff5050');
        },
        async (rect) => {
          if (!rect) { redrawImage(); return; }
          try {
            await controller.seed(classInput.value.trim() || 'object',
              rectToArray(rect) as RectArray);
          } catch (err) {
            setStatus(`seed rejected: ${err}`);
          }
        });
    };
    img.src = controller.imageUrl();
    setStatus(`session ${controller.state.sessionId} open`);
  } catch (err) {
    setStatus(`open failed: ${err}`);
  }
};

exportBtn.onclick = async () => {
  try {
    const path = await controller.exportSession();
    setStatus(`exported to ${path}`);
  } catch (err) {
    setStatus(`export failed: ${err}`);
  }
};

document.addEventListener('keydown', (ev) => {
  const active = controller.state.panels.find((p) => p.phase === 'awaiting_labels');
  if (!active) return;
  if (ev.key === 'Enter') {
    void submitPanel(active.id);
  } else if (ev.key === 'a') {
    void runAuto(active.id);
  }
});

controller.onChange = renderPanels;

// reload mid-session: ?session=<id> rehydrates from the server
const params = new URLSearchParams(window.location.search);
const existing = params.get('session');
if (existing) {
  controller.rehydrate(existing).then(() => {
    const img = new Image();
    img.onload = () => {
      baseImage = img;
      imageCanvas.width = img.naturalWidth;
      imageCanvas.height = img.naturalHeight;
      renderPanels();
    };
    img.src = controller.imageUrl();
  }).catch((err) => setStatus(`rehydrate failed: ${err}`));
}
