/**
 * Self-contained SVG marker map (equirectangular). The markers and their
 * labels are the contract here; swap in any tile map without touching the
 * rest of the app.
 */

import type { ResolvedRow } from "./types.js";

const W = 720;
const H = 360;

function project(lat: number, lng: number): [number, number] {
  return [((lng + 180) / 360) * W, ((90 - lat) / 180) * H];
}

export function renderMap(doc: Document, entries: ResolvedRow[]): SVGSVGElement {
  const NS = "http://www.w3.org/2000/svg";
  const svg = doc.createElementNS(NS, "svg") as SVGSVGElement;
  svg.setAttribute("viewBox", `0 0 ${W} ${H}`);
  svg.setAttribute("class", "map");

  for (let lng = -180; lng <= 180; lng += 30) {
    const line = doc.createElementNS(NS, "line");
    const [x] = project(0, lng);
    line.setAttribute("x1", String(x));
    line.setAttribute("x2", String(x));
    line.setAttribute("y1", "0");
    line.setAttribute("y2", String(H));
    line.setAttribute("class", lng === 0 ? "meridian zero" : "meridian");
    svg.appendChild(line);
  }
  for (let lat = -90; lat <= 90; lat += 30) {
    const line = doc.createElementNS(NS, "line");
    const [, y] = project(lat, 0);
    line.setAttribute("y1", String(y));
    line.setAttribute("y2", String(y));
    line.setAttribute("x1", "0");
    line.setAttribute("x2", String(W));
    line.setAttribute("class", lat === 0 ? "parallel zero" : "parallel");
    svg.appendChild(line);
  }

  for (const entry of entries) {
    const [x, y] = project(entry.lat, entry.lng);
    const marker = doc.createElementNS(NS, "g");
    marker.setAttribute("class", "marker");
    marker.setAttribute("data-id", entry.id);

    const dot = doc.createElementNS(NS, "circle");
    dot.setAttribute("cx", String(x));
    dot.setAttribute("cy", String(y));
    dot.setAttribute("r", "5");
    marker.appendChild(dot);

    const label = doc.createElementNS(NS, "text");
    label.setAttribute("x", String(x + 8));
    label.setAttribute("y", String(y - 6));
    label.setAttribute("class", "marker-label");
    label.textContent = entry.display;
    marker.appendChild(label);

    svg.appendChild(marker);
  }
  return svg;
}
