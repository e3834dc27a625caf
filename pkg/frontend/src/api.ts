/** Thin client over the review service HTTP API. */

import type { CaseRecord, CaseSummary, LabelRequest } from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(this.baseUrl + path, init);
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = await response.json();
        if (body && typeof body.detail === "string") detail = body.detail;
      } catch {
        // keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  listPredictions(status?: string): Promise<CaseSummary[]> {
    const query = status ? `?status=${encodeURIComponent(status)}` : "";
    return this.request<CaseSummary[]>(`/predictions${query}`);
  }

  getPrediction(procedureId: string): Promise<CaseRecord> {
    return this.request<CaseRecord>(`/predictions/${encodeURIComponent(procedureId)}`);
  }

  submitLabel(procedureId: string, body: LabelRequest): Promise<CaseRecord> {
    return this.request<CaseRecord>(
      `/predictions/${encodeURIComponent(procedureId)}/label`,
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
      },
    );
  }

  async exportGold(): Promise<string> {
    const response = await this.fetchImpl(this.baseUrl + "/export/gold");
    if (!response.ok) throw new ApiError(response.status, response.statusText);
    return response.text();
  }

  exportGoldUrl(): string {
    return this.baseUrl + "/export/gold";
  }
}
