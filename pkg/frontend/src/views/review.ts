// Active-learning review: the tiles the selector asked to have
// labeled, in the server's order, each with its uncertainty score and
// heatmap context. Annotations are WKT pasted per tile; one submit
// sends them as a batch, and completing the round links the follow-up
// experiment the server cloned.

import { clear, el } from "../dom.js";
import type { Experiment, Round } from "../types.js";

export interface ReviewHandlers {
  tileUrl: (task: string, classIndex: number, x: number, y: number) => string;
  onAnnotate: (wkt: string) => Promise<unknown>;
  onComplete: () => Promise<Experiment>;
}

export function renderReview(
  container: HTMLElement,
  round: Round,
  taskName: string,
  handlers: ReviewHandlers,
): void {
  clear(container);
  container.appendChild(el("h2", { text: `Label request ${round.round_id}` }));

  const meta = el(
    "dl",
    { class: "round-meta" },
    el("dt", { text: "source experiment" }),
    el(
      "dd",
      {},
      el("a", {
        href: `#/experiments/${round.source_experiment_id}`,
        text: round.source_experiment_id,
      }),
    ),
    el("dt", { text: "tiles requested" }),
    el("dd", { text: `${round.k} of ${round.requested_k}` }),
  );
  container.appendChild(meta);
  if (round.warning) {
    container.appendChild(el("div", { class: "round-warning", text: round.warning }));
  }

  const cards = el("div", { class: "tile-cards" });
  const textareas: HTMLTextAreaElement[] = [];
  round.tiles.forEach(([x, y], i) => {
    const card = el("article", { class: "tile-card", "data-tile": `${x},${y}` });
    card.appendChild(el("h4", { text: `tile (${x}, ${y})` }));
    card.appendChild(
      el(
        "div",
        { class: "uncertainty-row" },
        "uncertainty: ",
        el("span", { class: "uncertainty", text: String(round.uncertainties[i]) }),
      ),
    );
    const img = el("img", {
      class: "context-tile",
      src: handlers.tileUrl(taskName, 1, x, y),
    });
    img.addEventListener("error", () => {
      img.style.visibility = "hidden";
    });
    card.appendChild(img);
    const ta = el("textarea", {
      class: "wkt-input",
      placeholder: "paste WKT geometries for this tile",
    });
    textareas.push(ta);
    card.appendChild(ta);
    cards.appendChild(card);
  });
  container.appendChild(cards);

  const annotationError = el("div", { class: "annotation-error" });
  const serverError = el("div", { class: "server-error" });
  const status = el("div", { class: "task-status" });
  const cloneRef = el("div", { class: "clone-ref" });

  const showClone = (experimentId: string): void => {
    clear(cloneRef);
    cloneRef.append(
      "follow-up experiment: ",
      el("a", { class: "clone-link", href: `#/experiments/${experimentId}`, text: experimentId }),
    );
  };

  const submitBtn = el("button", { class: "submit-annotations", text: "Submit annotations" });
  submitBtn.addEventListener("click", () => {
    annotationError.textContent = "";
    serverError.textContent = "";
    const parts = textareas.map((t) => t.value.trim()).filter((v) => v.length > 0);
    if (!parts.length) {
      annotationError.textContent = "enter WKT for at least one tile before submitting";
      return;
    }
    handlers
      .onAnnotate(parts.join("\n"))
      .then(() => {
        status.textContent = "annotations recorded; labeling task completed";
      })
      .catch((err: Error) => {
        serverError.textContent = err.message;
      });
  });

  const completeBtn = el("button", { class: "complete-round", text: "Complete round" });
  completeBtn.addEventListener("click", () => {
    serverError.textContent = "";
    handlers
      .onComplete()
      .then((clone) => showClone(clone.experiment_id))
      .catch((err: Error) => {
        serverError.textContent = err.message;
      });
  });

  if (round.clone_experiment_id) {
    showClone(round.clone_experiment_id);
    submitBtn.disabled = true;
    completeBtn.disabled = true;
  }

  container.appendChild(el("div", { class: "review-actions" }, submitBtn, completeBtn));
  container.append(annotationError, serverError, status, cloneRef);
}
