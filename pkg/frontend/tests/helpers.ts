import { spawn, type ChildProcess } from "node:child_process";

import type { KeyValue } from "../src/storage.js";

/** In-memory stand-in for localStorage where a real Window is not needed. */
export class MemoryKV implements KeyValue {
  private map = new Map<string, string>();

  getItem(key: string): string | null {
    return this.map.has(key) ? this.map.get(key)! : null;
  }

  setItem(key: string, value: string): void {
    this.map.set(key, String(value));
  }

  removeItem(key: string): void {
    this.map.delete(key);
  }
}

export interface LiveServer {
  url: string;
  stop(): void;
}

/** Boot the actual Python server on an ephemeral port; tests talk to the real thing. */
export async function startServer(): Promise<LiveServer> {
  for (let attempt = 0; attempt < 5; attempt++) {
    const port = 20000 + Math.floor(Math.random() * 20000);
    const url = `http://127.0.0.1:${port}`;
    const child: ChildProcess = spawn("watn-server", [], {
      env: { ...process.env, WATN_BIND: `127.0.0.1:${port}` },
      stdio: "ignore",
    });
    const up = await waitUntil(async () => {
      try {
        const res = await fetch(url + "/healthz-probe");
        return res.status === 404; // any JSON answer means the server is ours and alive
      } catch {
        return false;
      }
    }, 5000);
    if (up) {
      return { url, stop: () => child.kill("SIGTERM") };
    }
    child.kill("SIGTERM");
  }
  throw new Error("could not start watn-server");
}

export async function waitUntil(check: () => boolean | Promise<boolean>, timeoutMs = 5000): Promise<boolean> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if (await check()) return true;
    await new Promise((resolve) => setTimeout(resolve, 25));
  }
  return false;
}
