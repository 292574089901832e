// Wire types mirroring the planning service's JSON payloads.

export type WorkflowStatus =
  | 'Running'
  | 'Finalized'
  | 'Escalated'
  | 'Approved'
  | 'Rejected';

export interface ViolationEntry {
  id: string;
  message: string;
}

export interface ReportDoc {
  s_task: number;
  s_guide: number;
  s_total: number;
  violations: ViolationEntry[];
  retrieved_chunk_ids: string[];
  feedback_text: string;
  notes: string[];
}

export interface SegComponentDoc {
  lesion_id: string;
  volume_mm3: number;
  centroid_mm: number[];
  oar_min_distance_mm: number | null;
}

export interface SegObservationDoc {
  mask_ref: string;
  lesion_volume_mm3: number;
  centroid_mm: number[];
  bbox: number[][];
  oar_min_distance_mm: (number | null)[];
  multiplicity: number;
  components: SegComponentDoc[];
}

export interface DoseObservationDoc {
  predicted_dose_j: number;
  dose_band: string;
  model_version: string;
}

export interface AgentTelemetryDoc {
  running_time_s: number;
  token_usage: number;
  success: boolean;
}

export interface WorkflowRecordDoc {
  case_id: string;
  status: WorkflowStatus;
  config: Record<string, unknown>;
  action_plan_lines: string[];
  mask_ref: string | null;
  seg_observation: SegObservationDoc | null;
  dose_observation: DoseObservationDoc | null;
  observation_blocks: string[];
  plans: string[];
  final_plan_text: string | null;
  reports: ReportDoc[];
  loop: { iteration?: number; t_max?: number; status?: string };
  telemetry: Record<string, AgentTelemetryDoc>;
  trace: string[];
  created_at: number;
  updated_at: number;
}

export interface PendingRecordDoc {
  case_id: string;
  status: 'Running';
}

export interface SegmentResponse {
  case_id: string;
  mask_ref: string;
  dice_vs_previous: number | null;
}

export interface EscalationsResponse {
  cases: WorkflowRecordDoc[];
}

export interface ListCasesResponse {
  cases: (WorkflowRecordDoc | PendingRecordDoc)[];
}

export interface TelemetryResponse {
  agents: Record<
    string,
    { mean_running_time_s: number; token_usage: number; success_rate: number }
  >;
  cases: number;
}

export type ReviewDecision = 'approve' | 'reject' | 'modify';

export type PlanPatch = Record<string, number | string | string[]>;
