// Shared test fixtures: a fake fetch and record factories with sentinel
// values that make any client-side recomputation detectable.

import type { FetchLike } from '../src/api.js';
import type { ReportDoc, WorkflowRecordDoc } from '../src/types.js';

export type RouteHandler = (init?: RequestInit) => unknown;

export interface RecordedCall {
  url: string;
  init?: RequestInit;
}

export function mockFetch(routes: Record<string, RouteHandler>): {
  fetchFn: FetchLike;
  calls: RecordedCall[];
} {
  const calls: RecordedCall[] = [];
  const fetchFn: FetchLike = async (url, init) => {
    calls.push({ url, init });
    const key = Object.keys(routes).find((k) => url.endsWith(k));
    if (!key) {
      return new Response(JSON.stringify({ error: `no mock for ${url}` }), { status: 404 });
    }
    const body = routes[key]!(init);
    if (body instanceof ArrayBuffer) {
      return new Response(body, { status: 200 });
    }
    if (body instanceof Response) return body;
    return new Response(JSON.stringify(body), {
      status: 200,
      headers: { 'Content-Type': 'application/json' },
    });
  };
  return { fetchFn, calls };
}

export function report(feedback: string, sTotal: 0 | 1): ReportDoc {
  return {
    s_task: sTotal,
    s_guide: 1,
    s_total: sTotal,
    violations: sTotal === 0 ? [{ id: 'PHY-MARGIN', message: 'margin too small' }] : [],
    retrieved_chunk_ids: [],
    feedback_text: feedback,
    notes: [],
  };
}

export function makeRecord(overrides: Partial<WorkflowRecordDoc> = {}): WorkflowRecordDoc {
  return {
    case_id: 'demo-0001',
    status: 'Escalated',
    config: {},
    action_plan_lines: [],
    mask_ref: 'masks/m000.rmsk',
    seg_observation: {
      mask_ref: 'masks/m000.rmsk',
      lesion_volume_mm3: 2145.117731,
      centroid_mm: [27.1, 26.9, 22.2],
      bbox: [
        [10, 10, 5],
        [25, 25, 15],
      ],
      oar_min_distance_mm: [13.37731],
      multiplicity: 1,
      components: [
        {
          lesion_id: 'L1',
          volume_mm3: 2145.117731,
          centroid_mm: [27.1, 26.9, 22.2],
          oar_min_distance_mm: 13.37731,
        },
      ],
    },
    dose_observation: {
      predicted_dose_j: 17731.731737,
      dose_band: 'medium',
      model_version: 'gbrt-1',
    },
    observation_blocks: [],
    plans: ['plan 1', 'plan 2', 'plan 3'],
    final_plan_text: 'REASONING:\n- r\n\nPLAN:\nsafety_margin: 8\n',
    reports: [
      report('Violation of PHY-MARGIN: Safety margin below 10 mm (requires safety_margin >= 10)', 0),
    ],
    loop: { iteration: 2, t_max: 2, status: 'Escalated' },
    telemetry: {},
    trace: [],
    created_at: 0,
    updated_at: 0,
    ...overrides,
  };
}

export function encodeGridBytes(
  magic: 'RVOL' | 'RMSK',
  dims: [number, number, number],
  spacing: [number, number, number],
  values: number[],
): ArrayBuffer {
  const [nx, ny, nz] = dims;
  const itemSize = magic === 'RVOL' ? 4 : 1;
  const buffer = new ArrayBuffer(32 + nx * ny * nz * itemSize);
  const view = new DataView(buffer);
  for (let i = 0; i < 4; i++) view.setUint8(i, magic.charCodeAt(i));
  view.setUint32(4, 1, true);
  view.setUint32(8, nx, true);
  view.setUint32(12, ny, true);
  view.setUint32(16, nz, true);
  view.setFloat32(20, spacing[0], true);
  view.setFloat32(24, spacing[1], true);
  view.setFloat32(28, spacing[2], true);
  values.forEach((v, i) => {
    if (magic === 'RVOL') view.setFloat32(32 + i * 4, v, true);
    else view.setUint8(32 + i, v);
  });
  return buffer;
}
