/**
 * Script-side bindings for the parafit fitting core.
 *
 * The classes here are thin handles over objects living in a running
 * parafit service: mutating a Variable through its handle mutates the same
 * object the server-side models reference, and a fit's write-back is
 * visible through the handle immediately afterwards. Released handles
 * refuse further operations.
 *
 * Composition mirrors the core surface: Variables feed density builders
 * (Gaussian, Exponential, Polynomial, AddPdf, ProdPdf, DalitzPdf), a
 * dataset binds observables to event rows, and FitManager(pdf, data).fit()
 * runs the minimization and returns the result document.
 */

import { readFile } from "node:fs/promises";

import {
  DatasetState,
  FitResult,
  PdfState,
  ServiceClient,
  SnapshotState,
  VariableState,
} from "./client.js";
import { ReleasedHandleError, TransportError } from "./errors.js";

export * from "./errors.js";
export * from "./csv.js";
export type { FitParameter, FitResult, SnapshotState } from "./client.js";
export { ServiceClient } from "./client.js";

export interface VariableSpec {
  value?: number;
  lower?: number;
  upper?: number;
  step?: number;
  fixed?: boolean;
  kind?: "parameter" | "observable";
}

export interface FitOptions {
  backend?: "serial" | "pool";
  threads?: number;
  edmTol?: number;
  maxCalls?: number;
}

abstract class Handle {
  #released = false;

  protected constructor(
    readonly session: Session,
    readonly handle: string,
  ) {}

  protected get client(): ServiceClient {
    if (this.#released) {
      throw new ReleasedHandleError(`${this.handle} was released by this client`);
    }
    return this.session.client;
  }

  get released(): boolean {
    return this.#released;
  }

  /** Drop the server-side object; any later use of this handle throws. */
  async release(): Promise<void> {
    await this.client.delete(`/objects/${this.handle}`);
    this.#released = true;
  }
}

export class Variable extends Handle {
  readonly name: string;

  private constructor(session: Session, state: VariableState) {
    super(session, state.handle);
    this.name = state.name;
  }

  static async create(session: Session, name: string, spec: VariableSpec = {}): Promise<Variable> {
    const state = await session.client.post<VariableState>("/variables", {
      name,
      value: spec.value ?? 0.0,
      lower: spec.lower ?? null,
      upper: spec.upper ?? null,
      step: spec.step ?? null,
      fixed: spec.fixed ?? false,
      kind: spec.kind ?? "parameter",
    });
    return new Variable(session, state);
  }

  async state(): Promise<VariableState> {
    return this.client.get<VariableState>(`/variables/${this.handle}`);
  }

  /** Current value as the core sees it (reflects fit write-back). */
  async value(): Promise<number> {
    return (await this.state()).value;
  }

  /** One-sigma uncertainty from the most recent converged fit. */
  async fitError(): Promise<number> {
    return (await this.state()).error;
  }

  /** Assign a new value; the core validates bounds and bumps the change counter. */
  async setValue(value: number): Promise<void> {
    await this.client.post<VariableState>(`/variables/${this.handle}/value`, { value });
  }
}

export class UnbinnedDataSet extends Handle {
  readonly observables: Variable[];

  private constructor(session: Session, state: DatasetState, observables: Variable[]) {
    super(session, state.handle);
    this.observables = observables;
  }

  static async create(
    session: Session,
    observables: Variable[],
    lenient = false,
  ): Promise<UnbinnedDataSet> {
    const state = await session.client.post<DatasetState>("/datasets", {
      observables: observables.map((o) => o.handle),
      lenient,
    });
    return new UnbinnedDataSet(session, state, observables);
  }

  async addEvent(row: number[]): Promise<void> {
    await this.addEvents([row]);
  }

  async addEvents(rows: number[][]): Promise<DatasetState> {
    return this.client.post<DatasetState>(`/datasets/${this.handle}/events`, { rows });
  }

  async state(): Promise<DatasetState> {
    return this.client.get<DatasetState>(`/datasets/${this.handle}`);
  }
}

export class Pdf extends Handle {
  readonly kind: string;
  readonly parameterHandles: Record<string, string>;

  protected constructor(session: Session, state: PdfState) {
    super(session, state.handle);
    this.kind = state.kind;
    this.parameterHandles = state.parameters;
  }

  static wrap(session: Session, state: PdfState): Pdf {
    return new Pdf(session, state);
  }
}

type ParamRef = Variable | number;

function refOf(p: ParamRef): string | number {
  return p instanceof Variable ? p.handle : p;
}

export async function Gaussian(
  session: Session,
  observable: Variable,
  mu: ParamRef,
  sigma: ParamRef,
): Promise<Pdf> {
  const state = await session.client.post<PdfState>("/pdfs/gaussian", {
    observable: observable.handle,
    mu: refOf(mu),
    sigma: refOf(sigma),
  });
  return Pdf.wrap(session, state);
}

export async function Exponential(
  session: Session,
  observable: Variable,
  alpha: ParamRef,
): Promise<Pdf> {
  const state = await session.client.post<PdfState>("/pdfs/exponential", {
    observable: observable.handle,
    alpha: refOf(alpha),
  });
  return Pdf.wrap(session, state);
}

export async function Polynomial(
  session: Session,
  observable: Variable,
  coefficients: ParamRef[],
): Promise<Pdf> {
  const state = await session.client.post<PdfState>("/pdfs/polynomial", {
    observable: observable.handle,
    coefficients: coefficients.map(refOf),
  });
  return Pdf.wrap(session, state);
}

export async function AddPdf(
  session: Session,
  children: Pdf[],
  fractions: ParamRef[],
): Promise<Pdf> {
  const state = await session.client.post<PdfState>("/pdfs/add", {
    children: children.map((c) => c.handle),
    fractions: fractions.map(refOf),
  });
  return Pdf.wrap(session, state);
}

export async function ProdPdf(session: Session, children: Pdf[]): Promise<Pdf> {
  const state = await session.client.post<PdfState>("/pdfs/prod", {
    children: children.map((c) => c.handle),
  });
  return Pdf.wrap(session, state);
}

/**
 * Build the three-body amplitude model from a model description file
 * (the same JSON layout the CLI's fit-dalitz consumes). The file is read
 * client-side; resonance parameters come back as named variable handles in
 * `parameterHandles`.
 */
export async function DalitzPdf(session: Session, modelPath: string, grid = 400): Promise<Pdf> {
  const text = await readFile(modelPath, "utf-8");
  const state = await session.client.post<PdfState>("/pdfs/dalitz", {
    model: JSON.parse(text),
    grid,
  });
  return Pdf.wrap(session, state);
}

export class FitManager {
  constructor(
    readonly pdf: Pdf,
    readonly data: UnbinnedDataSet,
    readonly options: FitOptions = {},
  ) {}

  /**
   * Minimize the NLL of (pdf, data). On convergence the fitted values and
   * errors are written back into the bound Variables server-side, so
   * `variable.value()` afterwards returns the fitted value.
   */
  async fit(): Promise<FitResult> {
    if (this.pdf.released || this.data.released) {
      throw new ReleasedHandleError("fit over a released pdf or dataset");
    }
    return this.pdf.session.client.post<FitResult>("/fits", {
      pdf: this.pdf.handle,
      dataset: this.data.handle,
      backend: this.options.backend ?? "serial",
      threads: this.options.threads ?? 0,
      edm_tol: this.options.edmTol ?? 1e-6,
      max_calls: this.options.maxCalls ?? null,
    });
  }
}

export class Session {
  readonly client: ServiceClient;

  private constructor(baseUrl: string) {
    this.client = new ServiceClient(baseUrl);
  }

  /** Connect to a running service and verify it answers. */
  static async connect(baseUrl: string): Promise<Session> {
    const session = new Session(baseUrl.replace(/\/+$/, ""));
    if (!(await session.client.health())) {
      throw new TransportError(`no parafit service at ${baseUrl}`);
    }
    return session;
  }

  variable(name: string, spec: VariableSpec = {}): Promise<Variable> {
    return Variable.create(this, name, spec);
  }

  dataset(observables: Variable[], lenient = false): Promise<UnbinnedDataSet> {
    return UnbinnedDataSet.create(this, observables, lenient);
  }

  /** All floating parameters known to the service, with change counters. */
  snapshot(): Promise<SnapshotState> {
    return this.client.get<SnapshotState>("/snapshot");
  }
}
