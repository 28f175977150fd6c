/** Test-side process management: launch the Python service and the CLI. */

import { ChildProcess, spawn, spawnSync } from "node:child_process";
import { createServer } from "node:net";

const PYTHON = process.env.PARAFIT_PYTHON ?? "python3";

export function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const srv = createServer();
    srv.listen(0, "127.0.0.1", () => {
      const address = srv.address();
      if (address === null || typeof address === "string") {
        reject(new Error("no port assigned"));
        return;
      }
      const port = address.port;
      srv.close(() => resolve(port));
    });
    srv.on("error", reject);
  });
}

export interface RunningService {
  url: string;
  stop(): void;
}

export async function startService(): Promise<RunningService> {
  const port = await freePort();
  const proc: ChildProcess = spawn(
    PYTHON,
    ["-m", "parafit", "serve", "--port", String(port)],
    { stdio: "ignore" },
  );
  const url = `http://127.0.0.1:${port}`;
  const deadline = Date.now() + 30_000;
  for (;;) {
    try {
      const resp = await fetch(`${url}/health`);
      if (resp.ok) {
        break;
      }
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) {
      proc.kill();
      throw new Error("service did not come up within 30s");
    }
    await new Promise((r) => setTimeout(r, 150));
  }
  return {
    url,
    stop: () => {
      proc.kill();
    },
  };
}

/** Run the parafit CLI synchronously; returns the exit code. */
export function runCli(args: string[]): number {
  const out = spawnSync(PYTHON, ["-m", "parafit", ...args], { encoding: "utf-8" });
  if (out.error) {
    throw out.error;
  }
  return out.status ?? -1;
}
