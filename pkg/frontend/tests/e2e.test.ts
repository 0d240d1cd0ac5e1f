// Scripted session against a real server: seed, two oracle-tight label
// rounds, converged badge state, export. The same steps are replayed
// headlessly with raw HTTP and the exported records must byte-match.

import { spawn, spawnSync, type ChildProcess } from 'node:child_process';
import { mkdtempSync, readFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';
import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import { ApiClient, type RectArray } from '../src/api.js';
import { SessionController } from '../src/session.js';

const PORT = 8131;
const BASE = `http://127.0.0.1:${PORT}`;
const FRONTEND_DIR = join(__dirname, '..');

let work: string;
let manifest: string;
let gtPath: string;
let server: ChildProcess | null = null;
let fixture: {
  class: string;
  seed_rect: RectArray;
  rounds: Array<{ front: RectArray; side: RectArray }>;
};

function run(cmd: string, args: string[]): string {
  const out = spawnSync(cmd, args, { encoding: 'utf8' });
  if (out.status !== 0) {
    throw new Error(`${cmd} ${args.join(' ')} failed:\n${out.stdout}\n${out.stderr}`);
  }
  return out.stdout;
}

async function waitForServer(): Promise<void> {
  for (let i = 0; i < 100; i += 1) {
    try {
      await fetch(`${BASE}/sessions/none`);
      return;
    } catch {
      await new Promise((res) => setTimeout(res, 150));
    }
  }
  throw new Error('server did not come up');
}

beforeAll(async () => {
  work = mkdtempSync(join(tmpdir(), 'rcv-ui-e2e-'));
  run('rcv', ['synth', '--scenes', '1', '--seed', '31', '--out',
    join(work, 'scenes'), '--set', 'scene.points_per_m2=2000']);
  manifest = join(work, 'scenes', 'scene_000', 'manifest.json');
  gtPath = join(work, 'scenes', 'scene_000', 'gt_boxes.json');
  fixture = JSON.parse(run('python3',
    [join(FRONTEND_DIR, 'scripts', 'make_fixture.py'), manifest]));
  server = spawn('rcv', ['serve', '--port', String(PORT), '--data',
    join(work, 'data')], { stdio: 'ignore' });
  await waitForServer();
}, 120_000);

afterAll(() => {
  server?.kill();
});

async function headlessReplay(): Promise<{ exportPath: string; boxes: unknown[] }> {
  const post = async (path: string, body: unknown) => {
    const resp = await fetch(`${BASE}${path}`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
    if (!resp.ok) throw new Error(`${path} -> ${resp.status}`);
    return resp.json();
  };
  const created = await post('/sessions', { path: manifest });
  const frustum = await post(`/sessions/${created.session_id}/frustums`, {
    class: fixture.class, rect: fixture.seed_rect,
  });
  let converged = false;
  for (const round of fixture.rounds) {
    const result = await post(`/frustums/${frustum.frustum_id}/labels`, {
      front_rect: round.front, side_rect: round.side,
    });
    converged = result.converged;
  }
  expect(converged).toBe(true);
  const boxes = await (await fetch(`${BASE}/sessions/${created.session_id}/boxes`)).json();
  const exported = await post(`/sessions/${created.session_id}/export`, {});
  return { exportPath: exported.path, boxes };
}

describe('scripted browser session', () => {
  it('seed + two label rounds converges and the export byte-matches a headless run',
    async () => {
      const controller = new SessionController(new ApiClient(BASE));
      await controller.open({ path: manifest });
      expect(controller.state.sessionId).not.toBeNull();

      const panel = await controller.seed(fixture.class, fixture.seed_rect);
      expect(panel.phase).toBe('awaiting_labels');
      expect(panel.views.map((v) => v.kind).sort()).toEqual(['front', 'side']);

      await controller.submitLabels(panel.id,
        fixture.rounds[0].front, fixture.rounds[0].side);
      expect(panel.phase).toBe('awaiting_labels');
      expect(panel.step).toBe(1);

      await controller.submitLabels(panel.id,
        fixture.rounds[1].front, fixture.rounds[1].side);
      expect(panel.phase).toBe('converged');   // the converged badge state
      expect(panel.box).not.toBeNull();

      // overlay data is non-empty for the final box
      const { wireframeSegments } = await import('../src/overlay.js');
      const segments = wireframeSegments(panel.box!, controller.state.intrinsics!);
      expect(segments.length).toBe(12);

      const uiExport = await controller.exportSession();
      const headless = await headlessReplay();

      const uiBytes = readFileSync(join(uiExport, 'boxes.json'));
      const headlessBytes = readFileSync(join(headless.exportPath, 'boxes.json'));
      expect(uiBytes.equals(headlessBytes)).toBe(true);

      // exported box vs ground truth, scored by the engine's exact IoU
      const iou = parseFloat(run('python3', ['-c', [
        'import sys, json',
        'from rcv.sceneio import load_boxes_json',
        'from rcv.boxops import iou3d',
        `pred = load_boxes_json(${JSON.stringify(join(uiExport, 'boxes.json'))})`,
        `gt = load_boxes_json(${JSON.stringify(gtPath)})`,
        'print(max(iou3d(p, g) for p in pred for g in gt))',
      ].join('\n')]));
      expect(iou).toBeGreaterThanOrEqual(0.9);
    }, 120_000);

  it('zero-area client rects never reach the server', async () => {
    const { dragToRect } = await import('../src/rect.js');
    expect(dragToRect({ u: 5, v: 5 }, { u: 5, v: 25 })).toBeNull();
  });

  it('reload mid-session rehydrates identical boxes', async () => {
    const controller = new SessionController(new ApiClient(BASE));
    await controller.open({ path: manifest });
    const panel = await controller.seed(fixture.class, fixture.seed_rect);
    await controller.submitLabels(panel.id,
      fixture.rounds[0].front, fixture.rounds[0].side);
    const before = await controller.refreshBoxes();

    const fresh = new SessionController(new ApiClient(BASE));
    await fresh.rehydrate(controller.state.sessionId!);
    const after = await fresh.refreshBoxes();
    expect(JSON.stringify(after)).toBe(JSON.stringify(before));
    expect(fresh.state.panels[0].step).toBe(1);
  }, 60_000);
});
