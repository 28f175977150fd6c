"""HTTP service wrapping the fitting core.

Objects created through the API (variables, datasets, density nodes) live
in a server-side store and are addressed by opaque handles; a client
mutating a variable through its handle mutates the same object the models
reference, so a fit's write-back is immediately visible to every reader.
Released handles answer 410 for any further use.

Library errors map to HTTP 400 with the error class name in the body, so
clients can re-raise typed exceptions.
"""

from __future__ import annotations

import itertools
import math
import threading

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from ..core import UnbinnedDataSet, Variable, set_value, snapshot
from ..dalitz import dalitz_pdf, load_dalitz_model
from ..engine import Backend, nll
from ..errors import ParafitError
from ..fitting import FitManager, MinimizerOptions
from ..pdf import PdfNode, add_pdf, exponential, gaussian, polynomial, prod_pdf
from ..sharding import sharded_nll
from .schemas import (
    AddCreate,
    DalitzCreate,
    DatasetCreate,
    DatasetState,
    EventsAdd,
    ExponentialCreate,
    FitRequest,
    FitResponse,
    GaussianCreate,
    NllRequest,
    NllResponse,
    ParamRef,
    PdfState,
    PolynomialCreate,
    ProdCreate,
    SnapshotResponse,
    ValueUpdate,
    VariableCreate,
    VariableState,
)


class HandleError(Exception):
    def __init__(self, status: int, error: str, detail: str):
        self.status = status
        self.error = error
        self.detail = detail


class ObjectStore:
    """Handle-addressed objects plus the shared variable registry."""

    def __init__(self):
        self._objects: dict[str, object] = {}
        self._released: set[str] = set()
        self._counters = {"var": itertools.count(1), "ds": itertools.count(1), "pdf": itertools.count(1)}
        self.lock = threading.Lock()

    def put(self, prefix: str, obj) -> str:
        handle = f"{prefix}-{next(self._counters[prefix])}"
        self._objects[handle] = obj
        return handle

    def get(self, handle: str, expected: type):
        if handle in self._released:
            raise HandleError(410, "ReleasedHandle", f"{handle} was released")
        obj = self._objects.get(handle)
        if obj is None:
            raise HandleError(404, "UnknownHandle", f"no object {handle}")
        if not isinstance(obj, expected):
            raise HandleError(400, "WrongHandleKind", f"{handle} is not a {expected.__name__}")
        return obj

    def release(self, handle: str) -> None:
        if handle in self._released:
            raise HandleError(410, "ReleasedHandle", f"{handle} was already released")
        if handle not in self._objects:
            raise HandleError(404, "UnknownHandle", f"no object {handle}")
        del self._objects[handle]
        self._released.add(handle)

    def variables(self) -> list[Variable]:
        return [o for o in self._objects.values() if isinstance(o, Variable)]

    def handle_of(self, obj) -> str:
        for handle, candidate in self._objects.items():
            if candidate is obj:
                return handle
        raise HandleError(404, "UnknownHandle", "object is not registered")


def _finite_or_none(x: float) -> float | None:
    return x if math.isfinite(x) else None


def create_app() -> FastAPI:
    app = FastAPI(title="parafit service", version="0.1.0")
    store = ObjectStore()

    @app.exception_handler(ParafitError)
    async def _parafit_error(_: Request, exc: ParafitError):
        return JSONResponse(
            status_code=400,
            content={"error": type(exc).__name__, "detail": str(exc)},
        )

    @app.exception_handler(HandleError)
    async def _handle_error(_: Request, exc: HandleError):
        return JSONResponse(status_code=exc.status, content={"error": exc.error, "detail": exc.detail})

    def resolve_param(ref: ParamRef, name: str) -> Variable:
        if isinstance(ref, str):
            return store.get(ref, Variable)
        var = Variable(f"_const_{name}_{id(ref)}_{next(store._counters['var'])}", float(ref), fixed=True)
        return var

    def variable_state(var: Variable) -> VariableState:
        return VariableState(
            handle=store.handle_of(var),
            name=var.name,
            value=var.value,
            lower=_finite_or_none(var.lower),
            upper=_finite_or_none(var.upper),
            step=var.step,
            fixed=var.fixed,
            kind=var.kind,
            generation=var.generation,
            error=var.error,
        )

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/variables", response_model=VariableState)
    def create_variable(req: VariableCreate):
        with store.lock:
            for existing in store.variables():
                if existing.name == req.name:
                    raise HandleError(400, "DuplicateName", f"variable {req.name!r} exists")
            var = Variable(
                req.name,
                req.value,
                lower=-math.inf if req.lower is None else req.lower,
                upper=math.inf if req.upper is None else req.upper,
                step=req.step,
                fixed=req.fixed,
                kind=req.kind,
            )
            store.put("var", var)
            return variable_state(var)

    @app.get("/variables/{handle}", response_model=VariableState)
    def get_variable(handle: str):
        with store.lock:
            return variable_state(store.get(handle, Variable))

    @app.post("/variables/{handle}/value", response_model=VariableState)
    def set_variable_value(handle: str, req: ValueUpdate):
        with store.lock:
            var = store.get(handle, Variable)
            set_value(var, req.value)
            return variable_state(var)

    @app.post("/datasets", response_model=DatasetState)
    def create_dataset(req: DatasetCreate):
        with store.lock:
            observables = [store.get(h, Variable) for h in req.observables]
            ds = UnbinnedDataSet(observables, lenient=req.lenient)
            handle = store.put("ds", ds)
            return DatasetState(
                handle=handle,
                observables=[o.name for o in ds.observables],
                n_events=0,
                rejected_count=0,
            )

    @app.get("/datasets/{handle}", response_model=DatasetState)
    def get_dataset(handle: str):
        with store.lock:
            ds = store.get(handle, UnbinnedDataSet)
            return DatasetState(
                handle=handle,
                observables=[o.name for o in ds.observables],
                n_events=ds.n_events,
                rejected_count=ds.rejected_count,
            )

    @app.post("/datasets/{handle}/events", response_model=DatasetState)
    def add_events(handle: str, req: EventsAdd):
        with store.lock:
            ds = store.get(handle, UnbinnedDataSet)
            for row in req.rows:
                ds.add_event(row)
            return DatasetState(
                handle=handle,
                observables=[o.name for o in ds.observables],
                n_events=ds.n_events,
                rejected_count=ds.rejected_count,
            )

    def pdf_state(handle: str, node: PdfNode) -> PdfState:
        params: dict[str, str] = {}
        for p in node.param_closure():
            try:
                params[p.name] = store.handle_of(p)
            except HandleError:
                params[p.name] = ""  # anonymous fixed constant
        return PdfState(
            handle=handle,
            kind=node.kind,
            observables=list(node.observable_names()),
            parameters=params,
        )

    @app.post("/pdfs/gaussian", response_model=PdfState)
    def create_gaussian(req: GaussianCreate):
        with store.lock:
            obs = store.get(req.observable, Variable)
            node = gaussian(obs, resolve_param(req.mu, "mu"), resolve_param(req.sigma, "sigma"))
            return pdf_state(store.put("pdf", node), node)

    @app.post("/pdfs/exponential", response_model=PdfState)
    def create_exponential(req: ExponentialCreate):
        with store.lock:
            obs = store.get(req.observable, Variable)
            node = exponential(obs, resolve_param(req.alpha, "alpha"))
            return pdf_state(store.put("pdf", node), node)

    @app.post("/pdfs/polynomial", response_model=PdfState)
    def create_polynomial(req: PolynomialCreate):
        with store.lock:
            obs = store.get(req.observable, Variable)
            coeffs = [resolve_param(c, f"c{k}") for k, c in enumerate(req.coefficients)]
            node = polynomial(obs, coeffs)
            return pdf_state(store.put("pdf", node), node)

    @app.post("/pdfs/add", response_model=PdfState)
    def create_add(req: AddCreate):
        with store.lock:
            children = [store.get(h, PdfNode) for h in req.children]
            fracs = [resolve_param(f, f"f{k}") for k, f in enumerate(req.fractions)]
            node = add_pdf(children, fracs)
            return pdf_state(store.put("pdf", node), node)

    @app.post("/pdfs/prod", response_model=PdfState)
    def create_prod(req: ProdCreate):
        with store.lock:
            children = [store.get(h, PdfNode) for h in req.children]
            node = prod_pdf(children)
            return pdf_state(store.put("pdf", node), node)

    @app.post("/pdfs/dalitz", response_model=PdfState)
    def create_dalitz(req: DalitzCreate):
        with store.lock:
            ch, terms = load_dalitz_model(req.model)
            node = dalitz_pdf(terms, ch, grid=(req.grid, req.grid))
            for obs in node.observables:
                store.put("var", obs)
            for term in terms:
                for var in (term.mass, term.width, term.magnitude, term.phase):
                    store.put("var", var)
            return pdf_state(store.put("pdf", node), node)

    @app.post("/fits", response_model=FitResponse)
    def run_fit(req: FitRequest):
        with store.lock:
            node = store.get(req.pdf, PdfNode)
            ds = store.get(req.dataset, UnbinnedDataSet)
            mode = "pool" if req.threads else req.backend
            backend = Backend(mode, workers=req.threads or None)
            options = MinimizerOptions(edm_tol=req.edm_tol, max_calls=req.max_calls)
            manager = FitManager(node, ds, backend=backend, options=options)
            result = manager.fit()
            return FitResponse(**result.to_dict())

    @app.post("/nll", response_model=NllResponse)
    def eval_nll(req: NllRequest):
        with store.lock:
            node = store.get(req.pdf, PdfNode)
            ds = store.get(req.dataset, UnbinnedDataSet)
            if req.workers > 1:
                value = sharded_nll(node, ds, None, req.workers)
            else:
                value = nll(node, ds)
            return NllResponse(nll=value)

    @app.get("/snapshot", response_model=SnapshotResponse)
    def get_snapshot():
        with store.lock:
            snap = snapshot(store.variables())
            return SnapshotResponse(
                names=list(snap.names),
                values=list(snap.values),
                generations=list(snap.generations),
            )

    @app.delete("/objects/{handle}", status_code=204)
    def release(handle: str):
        with store.lock:
            store.release(handle)

    return app
