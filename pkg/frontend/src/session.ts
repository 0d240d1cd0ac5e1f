// Session controller: the UI's only state. Holds no geometry; every
// box and every pseudo-view comes from a server response. Mutations
// are serialized per frustum and failed requests leave state untouched.

import {
  ApiClient,
  ApiError,
  BoxJson,
  Intrinsics,
  RectArray,
  ViewDescriptor,
} from './api.js';

export type Phase = 'awaiting_labels' | 'converged' | 'failed';

export interface FrustumPanel {
  id: string;
  cls: string;
  step: number;
  phase: Phase;
  views: ViewDescriptor[];
  box: BoxJson | null;
  hint: string | null;
  pending: boolean;
}

export interface SessionState {
  sessionId: string | null;
  intrinsics: Intrinsics | null;
  panels: FrustumPanel[];
  exportPath: string | null;
  error: string | null;
}

export class SessionController {
  state: SessionState = {
    sessionId: null,
    intrinsics: null,
    panels: [],
    exportPath: null,
    error: null,
  };

  onChange: (() => void) | null = null;

  constructor(private api: ApiClient) {}

  private notify(): void {
    if (this.onChange) {
      this.onChange();
    }
  }

  imageUrl(): string {
    return this.state.sessionId ? this.api.imageUrl(this.state.sessionId) : '';
  }

  panel(id: string): FrustumPanel {
    const p = this.state.panels.find((x) => x.id === id);
    if (!p) {
      throw new Error(`unknown frustum panel ${id}`);
    }
    return p;
  }

  async open(manifest: object | { path: string }): Promise<void> {
    const created = await this.api.createSession(manifest);
    this.state = {
      sessionId: created.session_id,
      intrinsics: created.intrinsics,
      panels: [],
      exportPath: null,
      error: null,
    };
    this.notify();
  }

  /** Rebuild panel state from the server (page reload mid-session). */
  async rehydrate(sessionId: string): Promise<void> {
    const info = await this.api.sessionInfo(sessionId);
    this.state = {
      sessionId: info.session_id,
      intrinsics: info.intrinsics,
      panels: info.frustums.map((f) => ({
        id: f.frustum_id,
        cls: f.class,
        step: f.step,
        phase: (f.status as Phase) ?? 'awaiting_labels',
        views: f.pseudo_views,
        box: f.box,
        hint: null,
        pending: false,
      })),
      exportPath: null,
      error: null,
    };
    this.notify();
  }

  async seed(cls: string, rect: RectArray): Promise<FrustumPanel> {
    if (!this.state.sessionId) {
      throw new Error('no open session');
    }
    const created = await this.api.createFrustum(this.state.sessionId, cls, rect);
    const panel: FrustumPanel = {
      id: created.frustum_id,
      cls,
      step: 0,
      phase: 'awaiting_labels',
      views: created.pseudo_views,
      box: created.coarse_box ?? null,
      hint: null,
      pending: false,
    };
    this.state.panels.push(panel);
    this.notify();
    return panel;
  }

  private applyResult(panel: FrustumPanel, result: {
    box: BoxJson; converged: boolean; next_pseudo_views?: ViewDescriptor[];
  }): void {
    panel.box = result.box;
    panel.hint = null;
    if (result.converged) {
      panel.phase = 'converged';
      panel.views = [];
    } else if (result.next_pseudo_views) {
      panel.step += 1;
      panel.views = result.next_pseudo_views;  // stale views are replaced
    }
  }

  private async mutate(
    panel: FrustumPanel,
    op: () => Promise<{ box: BoxJson; converged: boolean;
                        next_pseudo_views?: ViewDescriptor[] }>,
  ): Promise<void> {
    if (panel.pending) {
      throw new Error('a request for this frustum is already in flight');
    }
    panel.pending = true;
    this.notify();
    try {
      const result = await op();
      this.applyResult(panel, result);
    } catch (err) {
      // failed mutations must not advance the stepper
      if (err instanceof ApiError && err.status === 422) {
        panel.hint = err.detail.includes('disagree')
          ? 'views disagree on height — redraw'
          : err.detail;
      } else if (err instanceof ApiError && err.status === 409) {
        panel.hint = 'frustum already converged';
      } else {
        panel.hint = 'request failed; nothing was changed';
      }
      throw err;
    } finally {
      panel.pending = false;
      this.notify();
    }
  }

  async submitLabels(
    panelId: string,
    frontRect: RectArray,
    sideRect: RectArray,
  ): Promise<void> {
    const panel = this.panel(panelId);
    await this.mutate(panel, () =>
      this.api.submitLabels(panel.id, frontRect, sideRect));
  }

  async auto(panelId: string, detector?: 'oracle' | 'external'): Promise<void> {
    const panel = this.panel(panelId);
    await this.mutate(panel, () => this.api.auto(panel.id, detector));
  }

  async refreshBoxes(): Promise<BoxJson[]> {
    if (!this.state.sessionId) {
      return [];
    }
    return this.api.boxes(this.state.sessionId);
  }

  async exportSession(): Promise<string> {
    if (!this.state.sessionId) {
      throw new Error('no open session');
    }
    const out = await this.api.exportSession(this.state.sessionId);
    this.state.exportPath = out.path;
    this.notify();
    return out.path;
  }
}
