/**
 * Compose and fit a simple exponential from a script.
 *
 * Usage:
 *   node --loader ts-node/esm examples/exponential_fit.ts <events.csv> [serviceUrl]
 *
 * The CSV comes from `parafit generate --kind exponential ...`; the model
 * constants below (observable window, slope start value, bounds, step)
 * deliberately match the CLI's fit-exp defaults so both paths produce the
 * same result on the same file.
 */

import { Exponential, FitManager, Session, readEventsCsv } from "../src/index.js";
import type { FitResult } from "../src/index.js";

export const OBS_LO = 0.0;
export const OBS_HI = 10.0;
export const ALPHA_START = -1.0;
export const ALPHA_BOUNDS: [number, number] = [-20.0, 20.0];
export const ALPHA_STEP = 0.01;

export async function exponentialFit(
  dataPath: string,
  serviceUrl: string,
): Promise<{ result: FitResult; fittedAlpha: number; alphaError: number }> {
  const session = await Session.connect(serviceUrl);

  const table = await readEventsCsv(dataPath);
  const obsName = table.columns[0];

  const x = await session.variable(obsName, {
    value: 0.5 * (OBS_LO + OBS_HI),
    lower: OBS_LO,
    upper: OBS_HI,
    kind: "observable",
  });
  const alpha = await session.variable("alpha", {
    value: ALPHA_START,
    lower: ALPHA_BOUNDS[0],
    upper: ALPHA_BOUNDS[1],
    step: ALPHA_STEP,
  });

  const model = await Exponential(session, x, alpha);
  const data = await session.dataset([x]);
  await data.addEvents(table.rows.map((r) => [r[0]]));

  const result = await new FitManager(model, data).fit();

  // write-back: the bound variable now carries the fitted value and error
  const fittedAlpha = await alpha.value();
  const alphaError = await alpha.fitError();
  return { result, fittedAlpha, alphaError };
}

const invokedDirectly =
  process.argv[1] !== undefined && import.meta.url.endsWith(process.argv[1].split("/").pop()!);

if (invokedDirectly) {
  const [dataPath, serviceUrl = process.env.PARAFIT_URL ?? "http://127.0.0.1:8080"] =
    process.argv.slice(2);
  if (!dataPath) {
    console.error("usage: exponential_fit.ts <events.csv> [serviceUrl]");
    process.exit(2);
  }
  exponentialFit(dataPath, serviceUrl)
    .then(({ result, fittedAlpha, alphaError }) => {
      console.log(`status: ${result.status}`);
      console.log(`nll: ${result.nll}`);
      console.log(`alpha: ${fittedAlpha} +- ${alphaError}`);
      process.exit(result.status === "converged" ? 0 : 1);
    })
    .catch((err) => {
      console.error(String(err));
      process.exit(1);
    });
}
