// Thin typed client over fetch. Every simulated value shown anywhere in the
// console comes out of these calls; nothing is computed client-side except
// error-band coloring of already-displayed numbers.

import type {
  CreateRequest,
  Descriptor,
  Healthz,
  SessionBody,
  StepRequest,
  StepResponse,
} from "./types.js";

/** A structured error from the service: {"error": {"code", "message"}}. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

/** The service could not be reached at all (offline, refused, DNS). */
export class ConnectionError extends Error {
  constructor(readonly url: string, cause: unknown) {
    super(`service unreachable at ${url}`);
    this.name = "ConnectionError";
    this.cause = cause;
  }
}

/** A step was submitted while another step on the same session is pending. */
export class StepInFlightError extends Error {
  constructor(readonly sessionId: string) {
    super(`a step is already in flight for session ${sessionId}`);
    this.name = "StepInFlightError";
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ServiceClient {
  private readonly base: string;
  private readonly fetchImpl: FetchLike;
  private readonly inFlight = new Set<string>();

  constructor(baseUrl: string, fetchImpl?: FetchLike) {
    this.base = baseUrl.replace(/\/+$/, "");
    // default to the global fetch, bound so it keeps its receiver
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
  }

  /** True while a step on the given session has not settled. */
  stepPending(sessionId: string): boolean {
    return this.inFlight.has(sessionId);
  }

  async healthz(): Promise<Healthz> {
    return this.request("GET", "/healthz");
  }

  async createSession(req: CreateRequest): Promise<Descriptor> {
    return this.request("POST", "/sessions", req);
  }

  async getSession(id: string): Promise<SessionBody> {
    return this.request("GET", `/sessions/${encodeURIComponent(id)}`);
  }

  /**
   * Advance a session. At most one step per session may be in flight;
   * submitting a second one throws StepInFlightError synchronously,
   * mirroring the service's 409 step-in-flight contract.
   */
  async step(id: string, req: StepRequest): Promise<StepResponse> {
    if (this.inFlight.has(id)) {
      throw new StepInFlightError(id);
    }
    this.inFlight.add(id);
    try {
      return await this.request(
        "POST",
        `/sessions/${encodeURIComponent(id)}/step`,
        req,
      );
    } finally {
      this.inFlight.delete(id);
    }
  }

  async branch(id: string, atStep: number): Promise<Descriptor> {
    return this.request(
      "POST",
      `/sessions/${encodeURIComponent(id)}/branch`,
      { at_step: atStep },
    );
  }

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const url = this.base + path;
    let response: Response;
    try {
      response = await this.fetchImpl(url, {
        method,
        headers: body === undefined ? {} : { "content-type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (cause) {
      throw new ConnectionError(url, cause);
    }
    let payload: unknown = null;
    try {
      payload = await response.json();
    } catch {
      // non-JSON body; fall through to the status check
    }
    if (!response.ok) {
      const err = (payload as { error?: { code?: string; message?: string } })
        ?.error;
      const detail = (payload as { detail?: string })?.detail;
      throw new ApiError(
        response.status,
        err?.code ?? "http-error",
        err?.message ?? detail ?? `${method} ${path} failed (${response.status})`,
      );
    }
    return payload as T;
  }
}
