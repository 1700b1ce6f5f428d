/**
 * Thin typed client over the server's JSON endpoints. The UI speaks the exact
 * same wire protocol as every other client; there are no UI-specific routes.
 */

import type { Credential, FeedRow } from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, public code: string) {
    super(`${status} ${code}`);
  }
}

export class UnreachableError extends Error {}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(private baseUrl: string, private fetchFn: FetchLike = fetch) {}

  private async call(method: string, path: string, query?: Record<string, string>, body?: unknown): Promise<unknown> {
    let url = this.baseUrl.replace(/\/$/, "") + path;
    if (query) url += "?" + new URLSearchParams(query).toString();
    let response: Response;
    try {
      response = await this.fetchFn(url, {
        method,
        headers: body !== undefined ? { "Content-Type": "application/json" } : undefined,
        body: body !== undefined ? JSON.stringify(body) : undefined,
      });
    } catch (err) {
      throw new UnreachableError(String(err));
    }
    let data: unknown;
    try {
      data = await response.json();
    } catch {
      throw new ApiError(response.status, "bad_response");
    }
    if (!response.ok) {
      const code = (data as { error?: string })?.error ?? "error";
      throw new ApiError(response.status, code);
    }
    return data;
  }

  async register(): Promise<Credential> {
    return (await this.call("POST", "/register", undefined, {})) as Credential;
  }

  async checkin(cred: Credential, lat: number, lng: number, msg?: string): Promise<number> {
    const body: Record<string, unknown> = { ...cred, lat, lng };
    if (msg) body.msg = msg;
    const data = (await this.call("POST", "/checkin", undefined, body)) as { ts: number };
    return data.ts;
  }

  async feed(cred: Credential): Promise<FeedRow[]> {
    return (await this.call("GET", "/feed", { ...cred })) as FeedRow[];
  }

  async invite(cred: Credential): Promise<{ token: string; link: string }> {
    return (await this.call("POST", "/invite", undefined, { ...cred })) as { token: string; link: string };
  }

  /** Redeem an invite; resolves to the sharer's ID so the legend can be written. */
  async accept(cred: Credential, token: string): Promise<string> {
    const data = (await this.call("POST", "/accept", undefined, { ...cred, token })) as { sharer: string };
    return data.sharer;
  }

  async revoke(cred: Credential, sharer: string, reader: string): Promise<void> {
    await this.call("POST", "/revoke", undefined, { ...cred, sharer, reader });
  }

  async readers(cred: Credential): Promise<string[]> {
    return (await this.call("GET", "/readers", { ...cred })) as string[];
  }

  async sharers(cred: Credential): Promise<string[]> {
    return (await this.call("GET", "/sharers", { ...cred })) as string[];
  }

  async deleteSelf(cred: Credential): Promise<void> {
    await this.call("POST", "/delete", undefined, { ...cred });
  }
}
