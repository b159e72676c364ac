// Bootstrap: resume the session named in the URL hash, or show a small join
// form that creates one. The hash is the only client-side persistence.

import { SessionClient } from "./api.js";
import { SessionApp } from "./app.js";

const STRATEGIES = ["XSELECTOR", "ALL", "ARGMAX", "RANDOM", "ONLY_PRED", "PLAIN"];

function apiBase(): string {
  const params = new URLSearchParams(window.location.search);
  return params.get("api") ?? "";
}

async function start(root: HTMLElement, sessionId: string): Promise<void> {
  window.location.hash = sessionId;
  const app = new SessionApp(root, new SessionClient(apiBase()), sessionId);
  await app.refresh();
}

function renderJoinForm(root: HTMLElement, client: SessionClient): void {
  const options = STRATEGIES.map((s) => `<option value="${s}">${s}</option>`).join("");
  root.innerHTML = `
    <form class="join-form">
      <h2>Start a trading session</h2>
      <label>Condition <select id="strategy">${options}</select></label>
      <label>Scenario <select id="scenario">
        <option value="high">high</option><option value="low">low</option>
      </select></label>
      <label>Participant <input id="participant" type="text" placeholder="optional"/></label>
      <button type="submit">Start</button>
      <div class="error-banner" role="alert" hidden></div>
    </form>`;
  const form = root.querySelector("form") as HTMLFormElement;
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const strategy = (root.querySelector("#strategy") as HTMLSelectElement).value;
    const scenario = (root.querySelector("#scenario") as HTMLSelectElement).value;
    const participant = (root.querySelector("#participant") as HTMLInputElement).value;
    client
      .createSession(strategy, scenario, participant)
      .then((sessionId) => start(root, sessionId))
      .catch((err) => {
        const banner = root.querySelector(".error-banner") as HTMLElement;
        banner.textContent = err instanceof Error ? err.message : String(err);
        banner.hidden = false;
      });
  });
}

export function boot(root: HTMLElement): void {
  const sessionId = window.location.hash.replace(/^#/, "");
  if (sessionId) {
    void start(root, sessionId);
  } else {
    renderJoinForm(root, new SessionClient(apiBase()));
  }
}

if (typeof document !== "undefined") {
  const root = document.getElementById("app");
  if (root !== null) {
    boot(root);
  }
}
