// One case's review session: the fetched record, a pending plan patch, the
// selected slice and a staged segmentation prompt.
//
// Mutations are pessimistic: every action waits for the service response and
// the session state is whatever the service returned.

import { ServiceClient } from './api.js';
import type {
  PlanPatch,
  ReviewDecision,
  SegmentResponse,
  WorkflowRecordDoc,
} from './types.js';

export interface ClickPoint {
  x: number;
  y: number;
  z: number;
  positive: boolean;
}

// Click prompts accumulate: iterative refinement sends every staged point
// (positives grow the region, negatives carve it back).
export interface ClickPromptStage {
  kind: 'click';
  points: ClickPoint[];
}

export interface BBoxPromptStage {
  kind: 'bbox';
  lo: [number, number, number];
  hi: [number, number, number];
}

export type PromptStage = ClickPromptStage | BBoxPromptStage;

export function promptSpec(prompt: PromptStage): string {
  if (prompt.kind === 'click') {
    const parts = prompt.points.map((p) => `${p.x},${p.y},${p.z},${p.positive ? '+' : '-'}`);
    return `click:${parts.join(';')}`;
  }
  return `bbox:${prompt.lo.join(',')},${prompt.hi.join(',')}`;
}

// Client-side bounds check; the staged prompt never reaches the service when
// it falls outside the volume.
export function promptBoundsError(
  prompt: PromptStage,
  dims: [number, number, number],
): string | null {
  const inside = (c: [number, number, number]) =>
    c.every((v, axis) => Number.isInteger(v) && v >= 0 && v < dims[axis]!);
  if (prompt.kind === 'click') {
    if (prompt.points.length === 0) return 'click prompt needs at least one point';
    if (!prompt.points.some((p) => p.positive)) {
      return 'click prompt needs at least one positive point';
    }
    for (const p of prompt.points) {
      if (!inside([p.x, p.y, p.z])) {
        return `click (${p.x}, ${p.y}, ${p.z}) outside volume ${dims.join('x')}`;
      }
    }
    return null;
  }
  if (!inside(prompt.lo) || !inside(prompt.hi)) {
    return `bbox ${prompt.lo.join(',')}..${prompt.hi.join(',')} outside volume ${dims.join('x')}`;
  }
  return null;
}

export class ReviewSession {
  record: WorkflowRecordDoc | null = null;
  pendingPatch: PlanPatch = {};
  sliceIndex = 0;
  stagedPrompt: PromptStage | null = null;

  constructor(
    private readonly client: ServiceClient,
    readonly caseId: string,
  ) {}

  async load(): Promise<WorkflowRecordDoc> {
    this.record = await this.client.record(this.caseId);
    return this.record;
  }

  canReview(): boolean {
    return (
      this.record !== null &&
      (this.record.status === 'Escalated' || this.record.status === 'Finalized')
    );
  }

  canModify(): boolean {
    return this.record !== null && this.record.status === 'Escalated';
  }

  setPatchField(key: string, value: number | string | string[]): void {
    if (!this.canModify()) {
      throw new Error(`patch not editable while status is ${this.record?.status ?? 'unknown'}`);
    }
    this.pendingPatch[key] = value;
  }

  clearPatch(): void {
    this.pendingPatch = {};
  }

  async submitReview(decision: ReviewDecision): Promise<WorkflowRecordDoc> {
    const patch = decision === 'modify' ? this.pendingPatch : undefined;
    this.record = await this.client.review(this.caseId, decision, patch);
    if (decision === 'modify') this.pendingPatch = {};
    return this.record;
  }

  stagePrompt(prompt: PromptStage, dims: [number, number, number]): string | null {
    const error = promptBoundsError(prompt, dims);
    if (error === null) this.stagedPrompt = prompt;
    return error;
  }

  // Append one click to the staged prompt (starting a new prompt if none is
  // staged); rejected when the point is out of bounds or the accumulated
  // prompt would have no positive seed.
  addClick(point: ClickPoint, dims: [number, number, number]): string | null {
    const base =
      this.stagedPrompt?.kind === 'click' ? this.stagedPrompt.points : [];
    const prompt: ClickPromptStage = { kind: 'click', points: [...base, point] };
    return this.stagePrompt(prompt, dims);
  }

  async placePrompt(): Promise<SegmentResponse> {
    if (this.stagedPrompt === null) throw new Error('no prompt staged');
    const resp = await this.client.segment(this.caseId, promptSpec(this.stagedPrompt));
    this.stagedPrompt = null;
    // the record's mask_ref moved; refresh so the overlay tracks the service
    this.record = await this.client.record(this.caseId);
    return resp;
  }
}
