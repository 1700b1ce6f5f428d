/**
 * Page controllers. Everything the app touches (document, storage, network,
 * clock, geolocation) comes in through AppContext, so the same code runs in a
 * browser and under a DOM test harness unchanged.
 */

import { ApiClient, ApiError, UnreachableError } from "./api.js";
import { renderMap } from "./map.js";
import { parseTokenFromLink, resolveRows, truncateId } from "./resolve.js";
import { UiStore } from "./storage.js";
import type { Credential, ResolvedRow } from "./types.js";

export interface AppContext {
  doc: Document;
  store: UiStore;
  api: ApiClient;
  navigate: (path: string) => void;
  now: () => number;
  geolocate?: () => Promise<{ lat: number; lng: number }>;
  copyToClipboard?: (text: string) => Promise<void>;
  pollMs?: number;
}

/** Restore the own credential from storage, or register a fresh one. */
export async function ensureOwn(ctx: AppContext): Promise<Credential> {
  const existing = ctx.store.own();
  if (existing) return existing;
  const cred = await ctx.api.register();
  ctx.store.setOwn(cred);
  return cred;
}

const pageTimers = new WeakMap<HTMLElement, ReturnType<typeof setInterval>>();

export async function mount(root: HTMLElement, path: string, ctx: AppContext): Promise<void> {
  const [pathname, query] = splitPath(path);
  const stale = pageTimers.get(root);
  if (stale !== undefined) {
    clearInterval(stale);
    pageTimers.delete(root);
  }
  root.innerHTML = "";
  root.appendChild(header(ctx, pathname));
  const page = ctx.doc.createElement("main");
  root.appendChild(page);
  if (pathname === "/accept") {
    await acceptPage(page, query.get("token") ?? "", ctx);
  } else if (pathname === "/shares") {
    await sharesPage(page, ctx);
  } else {
    await mainPage(root, page, ctx);
  }
}

function splitPath(path: string): [string, URLSearchParams] {
  const at = path.indexOf("?");
  if (at < 0) return [path, new URLSearchParams()];
  return [path.slice(0, at), new URLSearchParams(path.slice(at + 1))];
}

function header(ctx: AppContext, active: string): HTMLElement {
  const el = ctx.doc.createElement("header");
  const title = ctx.doc.createElement("strong");
  title.textContent = "WATN";
  el.appendChild(title);
  for (const [href, label] of [["/", "map"], ["/shares", "sharing"]] as const) {
    const link = ctx.doc.createElement("a");
    link.href = href;
    link.textContent = label;
    if (href === active) link.className = "active";
    link.addEventListener("click", (event) => {
      event.preventDefault();
      ctx.navigate(href);
    });
    el.appendChild(link);
  }
  return el;
}

function banner(page: HTMLElement, ctx: AppContext, text: string): void {
  let el = page.querySelector(".error-banner") as HTMLElement | null;
  if (!el) {
    el = ctx.doc.createElement("div");
    el.className = "error-banner";
    page.prepend(el);
  }
  el.textContent = text;
}

function describeError(err: unknown): string {
  if (err instanceof UnreachableError) return "server unreachable";
  if (err instanceof ApiError) return `request failed: ${err.code}`;
  return String(err);
}

// ---------------------------------------------------------------- main page

async function mainPage(root: HTMLElement, page: HTMLElement, ctx: AppContext): Promise<void> {
  const cred = await ensureOwn(ctx);

  const who = ctx.doc.createElement("p");
  who.className = "own-id";
  who.textContent = `you are ${cred.id} (only you can map this to a person)`;
  page.appendChild(who);

  const status = ctx.doc.createElement("p");
  status.className = "feed-status";
  page.appendChild(status);

  const feedList = ctx.doc.createElement("ul");
  feedList.className = "feed";
  page.appendChild(feedList);

  const mapBox = ctx.doc.createElement("div");
  mapBox.className = "map-box";
  page.appendChild(mapBox);

  page.appendChild(checkinForm(ctx, cred, () => reload(true)));

  const refresh = ctx.doc.createElement("button");
  refresh.className = "refresh";
  refresh.textContent = "refresh";
  refresh.addEventListener("click", () => reload(true));
  page.appendChild(refresh);

  let fetching = false;

  function paint(entries: ResolvedRow[], stalenessMs: number | null): void {
    status.textContent =
      stalenessMs === null
        ? entries.length
          ? `${entries.length} sharing to you`
          : "nobody shares location with you yet"
        : `offline: showing data from ${Math.round(stalenessMs / 1000)}s ago`;
    status.classList.toggle("stale", stalenessMs !== null);
    feedList.innerHTML = "";
    for (const entry of entries) {
      feedList.appendChild(feedRow(ctx, entry, repaint));
    }
    mapBox.innerHTML = "";
    mapBox.appendChild(renderMap(ctx.doc, entries));
  }

  // renames relabel from storage alone; no refetch
  function repaint(): void {
    const cache = ctx.store.cache();
    if (!cache) return;
    const stale = lastStaleness;
    paint(resolveRows(cache.rows, ctx.store.legend()), stale);
  }

  let lastStaleness: number | null = null;

  async function reload(fromUser: boolean): Promise<void> {
    if (fetching) return; // one in-flight feed fetch at a time
    fetching = true;
    try {
      const rows = await ctx.api.feed(cred);
      ctx.store.setCache(rows, ctx.now());
      lastStaleness = null;
      paint(resolveRows(rows, ctx.store.legend()), null);
    } catch (err) {
      const cache = ctx.store.cache();
      if (err instanceof UnreachableError && cache) {
        lastStaleness = Math.max(0, ctx.now() - cache.fetched_ts);
        paint(resolveRows(cache.rows, ctx.store.legend()), lastStaleness);
      } else if (fromUser) {
        banner(page, ctx, describeError(err));
      }
    } finally {
      fetching = false;
    }
  }

  await reload(false);
  if (ctx.pollMs) {
    pageTimers.set(root, setInterval(() => void reload(false), ctx.pollMs));
  }
}

function feedRow(ctx: AppContext, entry: ResolvedRow, repaint: () => void): HTMLElement {
  const li = ctx.doc.createElement("li");
  li.dataset.id = entry.id;

  const name = ctx.doc.createElement("span");
  name.className = "display";
  name.textContent = entry.display;
  li.appendChild(name);

  const where = ctx.doc.createElement("span");
  where.className = "coords";
  where.textContent = ` ${entry.lat}, ${entry.lng}`;
  li.appendChild(where);

  if (entry.msg) {
    const msg = ctx.doc.createElement("em");
    msg.textContent = ` ${entry.msg}`;
    li.appendChild(msg);
  }

  const rename = ctx.doc.createElement("button");
  rename.className = "rename";
  rename.textContent = "rename";
  rename.addEventListener("click", () => {
    const input = ctx.doc.createElement("input");
    input.className = "rename-input";
    input.value = entry.display === entry.id ? "" : entry.display;
    const save = ctx.doc.createElement("button");
    save.className = "rename-save";
    save.textContent = "save";
    save.addEventListener("click", () => {
      if (input.value) ctx.store.setName(entry.id, input.value);
      else ctx.store.removeName(entry.id);
      repaint();
    });
    li.appendChild(input);
    li.appendChild(save);
  });
  li.appendChild(rename);
  return li;
}

function checkinForm(ctx: AppContext, cred: Credential, done: () => Promise<void>): HTMLElement {
  const form = ctx.doc.createElement("form");
  form.className = "checkin";

  const lat = numberInput(ctx, "lat", "latitude");
  const lng = numberInput(ctx, "lng", "longitude");
  const msg = ctx.doc.createElement("input");
  msg.name = "msg";
  msg.placeholder = "message (optional)";
  form.append(lat, lng, msg);

  if (ctx.geolocate) {
    const locate = ctx.doc.createElement("button");
    locate.type = "button";
    locate.className = "use-location";
    locate.textContent = "use my location";
    locate.addEventListener("click", async () => {
      try {
        const here = await ctx.geolocate!();
        lat.value = String(here.lat);
        lng.value = String(here.lng);
      } catch {
        banner(form, ctx, "geolocation unavailable; enter coordinates manually");
      }
    });
    form.appendChild(locate);
  }

  const submit = ctx.doc.createElement("button");
  submit.type = "submit";
  submit.className = "do-checkin";
  submit.textContent = "check in";
  form.appendChild(submit);

  form.addEventListener("submit", async (event) => {
    event.preventDefault();
    try {
      await ctx.api.checkin(cred, Number(lat.value), Number(lng.value), msg.value || undefined);
      msg.value = "";
      await done();
    } catch (err) {
      banner(form, ctx, describeError(err));
    }
  });
  return form;
}

function numberInput(ctx: AppContext, name: string, placeholder: string): HTMLInputElement {
  const input = ctx.doc.createElement("input");
  input.name = name;
  input.placeholder = placeholder;
  input.setAttribute("inputmode", "decimal");
  input.required = true;
  return input;
}

// -------------------------------------------------------------- accept page

async function acceptPage(page: HTMLElement, rawToken: string, ctx: AppContext): Promise<void> {
  const cred = await ensureOwn(ctx);
  const token = parseTokenFromLink(rawToken);
  const sharerHint = token.split(".")[0] ?? "";

  const intro = ctx.doc.createElement("p");
  intro.textContent = `someone (${truncateId(sharerHint)}) offers to share their location with you`;
  page.appendChild(intro);

  const note = ctx.doc.createElement("p");
  note.className = "hint";
  note.textContent = "pick a name for them; the name is stored only in this browser";
  page.appendChild(note);

  const nickname = ctx.doc.createElement("input");
  nickname.className = "nickname";
  nickname.placeholder = "their name for you";
  page.appendChild(nickname);

  const confirm = ctx.doc.createElement("button");
  confirm.className = "confirm-accept";
  confirm.textContent = "accept";
  page.appendChild(confirm);

  confirm.addEventListener("click", async () => {
    if (!nickname.value) {
      banner(page, ctx, "a name is required");
      return;
    }
    try {
      // two phases: the server-side edge first, the local legend second
      const sharer = await ctx.api.accept(cred, token);
      ctx.store.setName(sharer, nickname.value);
      ctx.navigate("/");
    } catch (err) {
      banner(page, ctx, describeError(err));
    }
  });
}

// -------------------------------------------------------------- shares page

async function sharesPage(page: HTMLElement, ctx: AppContext): Promise<void> {
  const cred = await ensureOwn(ctx);

  const inviteBox = ctx.doc.createElement("section");
  inviteBox.className = "invite-box";
  const makeInvite = ctx.doc.createElement("button");
  makeInvite.className = "make-invite";
  makeInvite.textContent = "create invite link";
  inviteBox.appendChild(makeInvite);
  page.appendChild(inviteBox);

  makeInvite.addEventListener("click", async () => {
    try {
      const invite = await ctx.api.invite(cred);
      let field = inviteBox.querySelector(".invite-link") as HTMLInputElement | null;
      if (!field) {
        field = ctx.doc.createElement("input");
        field.className = "invite-link";
        field.readOnly = true;
        const copy = ctx.doc.createElement("button");
        copy.className = "copy-invite";
        copy.textContent = "copy";
        copy.addEventListener("click", () => void ctx.copyToClipboard?.(field!.value));
        inviteBox.append(field, copy);
      }
      field.value = invite.link;
    } catch (err) {
      banner(page, ctx, describeError(err));
    }
  });

  const readersBox = listSection(ctx, "who can read my location", "readers");
  const sharersBox = listSection(ctx, "who shares location to me", "sharers");
  page.append(readersBox.section, sharersBox.section);

  const wipe = ctx.doc.createElement("button");
  wipe.className = "wipe";
  wipe.textContent = "delete my ID and all data";
  wipe.addEventListener("click", async () => {
    try {
      await ctx.api.deleteSelf(cred);
      ctx.store.wipe();
      ctx.navigate("/");
    } catch (err) {
      banner(page, ctx, describeError(err));
    }
  });
  page.appendChild(wipe);

  const settings = ctx.doc.createElement("section");
  settings.className = "settings";
  const server = ctx.doc.createElement("input");
  server.className = "server-url";
  server.value = ctx.store.serverUrl();
  const saveServer = ctx.doc.createElement("button");
  saveServer.className = "save-server";
  saveServer.textContent = "set server";
  saveServer.addEventListener("click", () => {
    ctx.store.setServerUrl(server.value);
    ctx.navigate("/shares");
  });
  settings.append(server, saveServer);
  page.appendChild(settings);

  async function reload(): Promise<void> {
    const legend = ctx.store.legend();
    try {
      const [readers, sharers] = [await ctx.api.readers(cred), await ctx.api.sharers(cred)];
      readersBox.fill(readers, legend, (peer) => ctx.api.revoke(cred, cred.id, peer).then(reload));
      sharersBox.fill(sharers, legend, (peer) => ctx.api.revoke(cred, peer, cred.id).then(reload));
    } catch (err) {
      banner(page, ctx, describeError(err));
    }
  }

  await reload();
}

function listSection(ctx: AppContext, titleText: string, kind: string) {
  const section = ctx.doc.createElement("section");
  section.className = kind;
  const title = ctx.doc.createElement("h2");
  title.textContent = titleText;
  section.appendChild(title);
  const list = ctx.doc.createElement("ul");
  section.appendChild(list);

  function fill(ids: string[], legend: Record<string, string>, onRevoke: (peer: string) => Promise<void>): void {
    list.innerHTML = "";
    if (!ids.length) {
      const empty = ctx.doc.createElement("li");
      empty.className = "empty";
      empty.textContent = "nobody";
      list.appendChild(empty);
    }
    for (const id of ids) {
      const li = ctx.doc.createElement("li");
      li.dataset.id = id;
      const label = ctx.doc.createElement("span");
      label.textContent = legend[id] ? `${legend[id]} (${truncateId(id)})` : id;
      li.appendChild(label);
      const revoke = ctx.doc.createElement("button");
      revoke.className = "revoke";
      revoke.textContent = "revoke";
      revoke.addEventListener("click", () => void onRevoke(id));
      li.appendChild(revoke);
      list.appendChild(li);
    }
  }

  return { section, fill };
}
