/**
 * Typed errors surfaced by the bindings.
 *
 * Core-side failures arrive as HTTP 4xx bodies of the form
 * `{"error": "<CoreClassName>", "detail": "..."}`; they re-raise here as
 * CoreError instances carrying the core error name, so callers can branch
 * on `err.coreName` ("OutOfBounds", "OutOfRange", "NonPositiveNorm", ...).
 */

export class CoreError extends Error {
  /** Error class name as reported by the fitting core. */
  readonly coreName: string;
  /** HTTP status the service answered with. */
  readonly status: number;

  constructor(coreName: string, detail: string, status: number) {
    super(`${coreName}: ${detail}`);
    this.name = "CoreError";
    this.coreName = coreName;
    this.status = status;
  }
}

/** Thrown when a handle is used after release(), or never existed. */
export class ReleasedHandleError extends CoreError {
  constructor(detail: string, status = 410) {
    super("ReleasedHandle", detail, status);
    this.name = "ReleasedHandleError";
  }
}

export class TransportError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "TransportError";
  }
}

export function isCoreError(err: unknown, coreName?: string): err is CoreError {
  return err instanceof CoreError && (coreName === undefined || err.coreName === coreName);
}
