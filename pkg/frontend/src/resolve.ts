import type { FeedRow, ResolvedRow } from "./types.js";

/**
 * ID -> name substitution with raw-ID fallback. Pure and order-preserving;
 * the same semantics as every other WATN client.
 */
export function resolveRows(rows: FeedRow[], legend: Record<string, string>): ResolvedRow[] {
  return rows.map((row) => ({ ...row, display: legend[row.id] ?? row.id }));
}

/** Short form of a pseudonym for confirmation screens. */
export function truncateId(id: string): string {
  return id.length <= 10 ? id : id.slice(0, 10) + "…";
}

export function parseTokenFromLink(linkOrToken: string): string {
  const marker = "token=";
  const at = linkOrToken.indexOf(marker);
  return at >= 0 ? linkOrToken.slice(at + marker.length) : linkOrToken;
}
