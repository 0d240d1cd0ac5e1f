// Typed client for the annotation service. All geometry lives on the
// server; this module only moves JSON.

export interface BoxJson {
  class: string;
  score: number;
  center: number[];
  rotation: number[];
  extent: number[];
  corners: number[][];
  converged: boolean;
  steps: number;
}

export interface ViewDescriptor {
  kind: 'front' | 'side';
  url: string;
  width: number;
  height: number;
  scale: number;
  offset_u: number;
  offset_v: number;
  step: number;
}

export interface Intrinsics {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
}

export interface SessionCreated {
  session_id: string;
  intrinsics: Intrinsics;
  image: { width: number; height: number };
}

export interface FrustumCreated {
  frustum_id: string;
  n_points: number;
  pseudo_views: ViewDescriptor[];
  coarse_box?: BoxJson;
}

export interface LabelResult {
  box: BoxJson;
  converged: boolean;
  next_pseudo_views?: ViewDescriptor[];
}

export interface FrustumInfo {
  frustum_id: string;
  class: string;
  status: string;
  step: number;
  box: BoxJson | null;
  pseudo_views: ViewDescriptor[];
}

export interface SessionInfo {
  session_id: string;
  intrinsics: Intrinsics;
  frustums: FrustumInfo[];
}

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export type RectArray = [number, number, number, number];

async function request<T>(method: string, url: string, body?: unknown): Promise<T> {
  const resp = await fetch(url, {
    method,
    headers: body === undefined ? undefined : { 'Content-Type': 'application/json' },
    body: body === undefined ? undefined : JSON.stringify(body),
  });
  const text = await resp.text();
  if (!resp.ok) {
    let detail = text;
    try {
      const parsed = JSON.parse(text);
      detail = parsed.detail ?? parsed.error ?? text;
    } catch {
      // non-JSON error body: keep raw text
    }
    throw new ApiError(resp.status, detail);
  }
  return JSON.parse(text) as T;
}

export class ApiClient {
  constructor(private base: string = '') {}

  url(path: string): string {
    return this.base + path;
  }

  createSession(manifest: object | { path: string }): Promise<SessionCreated> {
    return request('POST', this.url('/sessions'), manifest);
  }

  sessionInfo(sessionId: string): Promise<SessionInfo> {
    return request('GET', this.url(`/sessions/${sessionId}`));
  }

  imageUrl(sessionId: string): string {
    return this.url(`/sessions/${sessionId}/image`);
  }

  createFrustum(sessionId: string, cls: string, rect: RectArray): Promise<FrustumCreated> {
    return request('POST', this.url(`/sessions/${sessionId}/frustums`), {
      class: cls,
      rect,
    });
  }

  submitLabels(frustumId: string, frontRect: RectArray, sideRect: RectArray): Promise<LabelResult> {
    return request('POST', this.url(`/frustums/${frustumId}/labels`), {
      front_rect: frontRect,
      side_rect: sideRect,
    });
  }

  auto(frustumId: string, detector?: 'oracle' | 'external'): Promise<LabelResult> {
    return request('POST', this.url(`/frustums/${frustumId}/auto`),
      detector ? { detector } : {});
  }

  boxes(sessionId: string): Promise<BoxJson[]> {
    return request('GET', this.url(`/sessions/${sessionId}/boxes`));
  }

  exportSession(sessionId: string): Promise<{ path: string }> {
    return request('POST', this.url(`/sessions/${sessionId}/export`));
  }
}
