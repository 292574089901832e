// View-models for the review queue and readouts.
//
// Thin-client rule: every figure shown to the clinician is a service value
// passed through String() untouched. No arithmetic happens here; the
// network-mock tests feed sentinel values and assert verbatim passthrough.

import type { SegmentResponse, WorkflowRecordDoc } from './types.js';

export interface QueueRow {
  caseId: string;
  status: string;
  planCount: string;
  feedbackLines: string[];
  loopIteration: string;
}

export function isReviewable(record: WorkflowRecordDoc): boolean {
  return record.status === 'Escalated' || record.status === 'Finalized';
}

export function queueRow(record: WorkflowRecordDoc): QueueRow {
  const lastReport = record.reports[record.reports.length - 1];
  return {
    caseId: record.case_id,
    status: record.status,
    planCount: String(record.plans.length),
    feedbackLines: lastReport ? lastReport.feedback_text.split('\n').filter(Boolean) : [],
    loopIteration: String(record.loop.iteration ?? ''),
  };
}

export function buildQueue(escalated: WorkflowRecordDoc[], finalized: WorkflowRecordDoc[]): QueueRow[] {
  const rows = [...escalated, ...finalized].filter(isReviewable).map(queueRow);
  // escalated cases first, then by case id; statuses come from the service
  return rows.sort((a, b) =>
    a.status === b.status
      ? a.caseId.localeCompare(b.caseId)
      : a.status === 'Escalated'
        ? -1
        : 1,
  );
}

export function formatDice(resp: SegmentResponse): string {
  return resp.dice_vs_previous === null
    ? 'Dice vs previous: n/a'
    : `Dice vs previous: ${String(resp.dice_vs_previous)}`;
}

export function formatDose(record: WorkflowRecordDoc): string {
  const dose = record.dose_observation;
  if (!dose) return 'dose: n/a';
  return `dose: ${String(dose.predicted_dose_j)} J (${dose.dose_band})`;
}

export function formatLesion(record: WorkflowRecordDoc): string {
  const seg = record.seg_observation;
  if (!seg) return 'lesion: n/a';
  return `lesion: ${String(seg.lesion_volume_mm3)} mm3, ${String(seg.multiplicity)} component(s)`;
}
