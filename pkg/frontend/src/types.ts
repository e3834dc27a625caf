/** Wire types mirroring the review service's JSON payloads. */

export type Decision = "confirmed_ssi" | "confirmed_superficial" | "rejected";
export type CaseStatus = "pending" | Decision;

export interface Evidence {
  source: string; // term | icd10 | ccam | atc | bacterio
  detail: string;
  snippet: string | null;
}

export interface ReviewLabel {
  procedure_id: string;
  reviewer: string;
  decision: Decision;
  timestamp: string;
  comment: string | null;
}

/** Row shape of GET /predictions (no evidence bodies). */
export interface CaseSummary {
  procedure_id: string;
  probability: number;
  flagged: boolean;
  status: CaseStatus;
  version: number;
  history: ReviewLabel[];
  evidence_count: number;
}

/** Full record of GET /predictions/{id}. */
export interface CaseRecord {
  procedure_id: string;
  probability: number;
  flagged: boolean;
  status: CaseStatus;
  version: number;
  history: ReviewLabel[];
  evidence: Evidence[];
}

export interface LabelRequest {
  reviewer: string;
  decision: Decision;
  comment?: string | null;
  expected_version?: number;
}

export interface StatusCounts {
  pending: number;
  confirmed: number;
  rejected: number;
}
