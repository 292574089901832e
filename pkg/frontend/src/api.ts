// Typed client for the planning service. The console talks to the service
// exclusively through this module; the fetch implementation is injectable so
// tests can replace the network wholesale.

import type {
  EscalationsResponse,
  ListCasesResponse,
  PlanPatch,
  ReviewDecision,
  SegmentResponse,
  TelemetryResponse,
  WorkflowRecordDoc,
} from './types.js';

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ServiceError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

export class ServiceClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, init);
    const body = await resp.text();
    if (!resp.ok) {
      let message = body;
      try {
        message = (JSON.parse(body) as { error?: string }).error ?? body;
      } catch {
        // non-JSON error body; keep raw text
      }
      throw new ServiceError(resp.status, message);
    }
    return JSON.parse(body) as T;
  }

  escalations(): Promise<EscalationsResponse> {
    return this.json('/escalations');
  }

  listCases(): Promise<ListCasesResponse> {
    return this.json('/cases');
  }

  record(caseId: string): Promise<WorkflowRecordDoc> {
    return this.json(`/cases/${caseId}`);
  }

  async planText(caseId: string): Promise<string> {
    const resp = await this.fetchFn(`${this.baseUrl}/cases/${caseId}/plan`);
    const body = await resp.text();
    if (!resp.ok) throw new ServiceError(resp.status, body);
    return body;
  }

  review(
    caseId: string,
    decision: ReviewDecision,
    patch?: PlanPatch,
  ): Promise<WorkflowRecordDoc> {
    return this.json(`/cases/${caseId}/review`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(patch ? { decision, patch } : { decision }),
    });
  }

  segment(caseId: string, promptSpec: string): Promise<SegmentResponse> {
    return this.json('/segment', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ case_id: caseId, prompt: promptSpec }),
    });
  }

  telemetry(): Promise<TelemetryResponse> {
    return this.json('/telemetry');
  }

  async volumeBytes(caseId: string): Promise<ArrayBuffer> {
    const resp = await this.fetchFn(`${this.baseUrl}/cases/${caseId}/volume`);
    if (!resp.ok) throw new ServiceError(resp.status, await resp.text());
    return resp.arrayBuffer();
  }

  async maskBytes(caseId: string, maskRef: string): Promise<ArrayBuffer> {
    const name = maskRef.split('/').pop() ?? maskRef;
    const resp = await this.fetchFn(`${this.baseUrl}/cases/${caseId}/masks/${name}`);
    if (!resp.ok) throw new ServiceError(resp.status, await resp.text());
    return resp.arrayBuffer();
  }
}
