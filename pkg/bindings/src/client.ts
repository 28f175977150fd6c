/**
 * Minimal HTTP transport for the fitting service.
 *
 * Every object created through the API lives server-side and is addressed
 * by an opaque handle string; this module only moves JSON back and forth
 * and converts error bodies into typed exceptions.
 */

import { CoreError, ReleasedHandleError, TransportError } from "./errors.js";

export interface VariableState {
  handle: string;
  name: string;
  value: number;
  lower: number | null;
  upper: number | null;
  step: number;
  fixed: boolean;
  kind: string;
  generation: number;
  error: number;
}

export interface DatasetState {
  handle: string;
  observables: string[];
  n_events: number;
  rejected_count: number;
}

export interface PdfState {
  handle: string;
  kind: string;
  observables: string[];
  parameters: Record<string, string>;
}

export interface FitParameter {
  name: string;
  value: number;
  error: number;
  fixed: boolean;
}

/** Result document; mirrors the CLI's JSON schema field for field. */
export interface FitResult {
  status: string;
  nll: number;
  edm: number;
  n_calls: number;
  wall_time_s: number;
  parameters: FitParameter[];
  covariance: number[];
}

export interface SnapshotState {
  names: string[];
  values: number[];
  generations: number[];
}

export class ServiceClient {
  constructor(readonly baseUrl: string) {}

  async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    let resp: Response;
    try {
      resp = await fetch(this.baseUrl + path, {
        method,
        headers: body === undefined ? undefined : { "content-type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      throw new TransportError(`cannot reach ${this.baseUrl}: ${String(err)}`);
    }
    if (resp.status === 204) {
      return undefined as T;
    }
    const text = await resp.text();
    const doc = text ? JSON.parse(text) : {};
    if (!resp.ok) {
      const name = typeof doc.error === "string" ? doc.error : `Http${resp.status}`;
      const detail =
        typeof doc.detail === "string" ? doc.detail : JSON.stringify(doc.detail ?? doc);
      if (name === "ReleasedHandle") {
        throw new ReleasedHandleError(detail, resp.status);
      }
      throw new CoreError(name, detail, resp.status);
    }
    return doc as T;
  }

  get<T>(path: string): Promise<T> {
    return this.request<T>("GET", path);
  }

  post<T>(path: string, body?: unknown): Promise<T> {
    return this.request<T>("POST", path, body);
  }

  delete(path: string): Promise<void> {
    return this.request<void>("DELETE", path);
  }

  async health(): Promise<boolean> {
    try {
      const doc = await this.get<{ status: string }>("/health");
      return doc.status === "ok";
    } catch {
      return false;
    }
  }
}
