export interface Credential {
  id: string;
  secret: string;
}

export interface FeedRow {
  id: string;
  lat: number;
  lng: number;
  ts: number;
  msg?: string;
}

export interface ResolvedRow extends FeedRow {
  /** Legend name when known, otherwise the raw ID. */
  display: string;
}

export interface CachedFeed {
  rows: FeedRow[];
  fetched_ts: number;
}
