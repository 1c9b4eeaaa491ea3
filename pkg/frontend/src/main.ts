/**
 * Browser bootstrap: render into #app and translate DOM events into
 * controller calls via `data-action` delegation.
 */

import { ApiClient } from "./api.js";
import { App, type AppView } from "./controller.js";
import { renderDetail, renderQueue } from "./render.js";

function render(root: HTMLElement, view: AppView): void {
  root.innerHTML = view.kind === "queue" ? renderQueueWithNotice(view) : renderDetail(view);
}

function renderQueueWithNotice(view: AppView & { kind: "queue" }): string {
  const notice = view.notice ? `<p class="notice">${view.notice}</p>` : "";
  return notice + renderQueue(view);
}

function reviewerName(root: HTMLElement): string {
  const input = root.querySelector<HTMLInputElement>("#reviewer-name");
  return input ? input.value : "";
}

export function start(root: HTMLElement): App {
  const api = new ApiClient();
  const app = new App(api, (view) => render(root, view));

  root.addEventListener("click", (event) => {
    const target = (event.target as HTMLElement).closest<HTMLElement>("[data-action]");
    if (!target) {
      return;
    }
    switch (target.dataset.action) {
      case "reload-queue":
        void app.loadQueue();
        break;
      case "open-item":
        void app.openItem(target.dataset.scan ?? "", Number(target.dataset.index));
        break;
      case "back-to-queue":
        void app.backToQueue();
        break;
      case "submit-decision":
        void app.submit(reviewerName(root));
        break;
      case "retry-submit":
        void app.retry();
        break;
      case "amend-decision":
        void app.amend();
        break;
      case "dismiss-conflict":
        app.dismissConflict();
        break;
      default:
        break;
    }
  });

  root.addEventListener("change", (event) => {
    const target = event.target as HTMLElement;
    if (target.dataset.action === "toggle-object") {
      app.toggle(Number(target.dataset.id));
    }
  });

  void app.loadQueue();
  return app;
}

const rootElement = typeof document !== "undefined" ? document.getElementById("app") : null;
if (rootElement) {
  start(rootElement);
}
