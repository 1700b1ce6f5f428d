/**
 * Browser entry point: wires real browser capabilities into the app context
 * and routes on pathname. Host this as static files with an index.html
 * fallback so the /accept deep link resolves.
 */

import { ApiClient } from "./api.js";
import { mount, type AppContext } from "./app.js";
import { UiStore } from "./storage.js";

function geolocate(): Promise<{ lat: number; lng: number }> {
  return new Promise((resolve, reject) => {
    if (!navigator.geolocation) {
      reject(new Error("no geolocation capability"));
      return;
    }
    navigator.geolocation.getCurrentPosition(
      (position) => resolve({ lat: position.coords.latitude, lng: position.coords.longitude }),
      (err) => reject(err),
      { timeout: 10_000 }
    );
  });
}

function start(): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app element");
  const store = new UiStore(window.localStorage);

  const ctx: AppContext = {
    doc: document,
    store,
    api: new ApiClient(store.serverUrl(), (url, init) => fetch(url, init)),
    navigate: (path: string) => {
      window.history.pushState(null, "", path);
      void mount(root, path, freshCtx());
    },
    now: () => Date.now(),
    geolocate,
    copyToClipboard: (text) => navigator.clipboard?.writeText(text) ?? Promise.resolve(),
    pollMs: 30_000,
  };

  // the server URL is a settings field; rebuild the client when pages switch
  function freshCtx(): AppContext {
    return { ...ctx, api: new ApiClient(store.serverUrl(), (url, init) => fetch(url, init)) };
  }

  window.addEventListener("popstate", () => {
    void mount(root, window.location.pathname + window.location.search, freshCtx());
  });
  void mount(root, window.location.pathname + window.location.search, freshCtx());
}

start();
