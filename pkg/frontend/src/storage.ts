/**
 * All identity data lives here, in the browser's own key/value storage:
 * `watn.own` (credential), `watn.legend` (ID -> name), `watn.cache` (last
 * feed). None of it is ever sent anywhere except the id/secret auth fields.
 */

import type { CachedFeed, Credential, FeedRow } from "./types.js";

export const KEY_OWN = "watn.own";
export const KEY_LEGEND = "watn.legend";
export const KEY_CACHE = "watn.cache";
export const KEY_SERVER = "watn.server";

export const DEFAULT_SERVER = "http://127.0.0.1:8470";

/** The subset of the DOM Storage interface the store needs. */
export interface KeyValue {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

function read<T>(kv: KeyValue, key: string): T | null {
  const raw = kv.getItem(key);
  if (raw === null) return null;
  try {
    return JSON.parse(raw) as T;
  } catch {
    return null;
  }
}

export class UiStore {
  constructor(private kv: KeyValue) {}

  own(): Credential | null {
    return read<Credential>(this.kv, KEY_OWN);
  }

  setOwn(cred: Credential): void {
    this.kv.setItem(KEY_OWN, JSON.stringify(cred));
  }

  legend(): Record<string, string> {
    return read<Record<string, string>>(this.kv, KEY_LEGEND) ?? {};
  }

  setName(id: string, name: string): void {
    const legend = this.legend();
    legend[id] = name;
    this.kv.setItem(KEY_LEGEND, JSON.stringify(legend));
  }

  removeName(id: string): void {
    const legend = this.legend();
    delete legend[id];
    this.kv.setItem(KEY_LEGEND, JSON.stringify(legend));
  }

  cache(): CachedFeed | null {
    return read<CachedFeed>(this.kv, KEY_CACHE);
  }

  setCache(rows: FeedRow[], fetchedTs: number): void {
    this.kv.setItem(KEY_CACHE, JSON.stringify({ rows, fetched_ts: fetchedTs }));
  }

  serverUrl(): string {
    return this.kv.getItem(KEY_SERVER) ?? DEFAULT_SERVER;
  }

  setServerUrl(url: string): void {
    this.kv.setItem(KEY_SERVER, url);
  }

  /** Erase everything local: credential, legend, cache. Server URL survives. */
  wipe(): void {
    this.kv.removeItem(KEY_OWN);
    this.kv.removeItem(KEY_LEGEND);
    this.kv.removeItem(KEY_CACHE);
  }
}
