import { beforeEach, describe, expect, it, vi } from "vitest";

import { ApiError } from "../src/api.js";
import { renderReview } from "../src/views/review.js";
import type { ReviewHandlers } from "../src/views/review.js";
import { mkExperiment, mkRound, resetCounter } from "./mock.js";

async function flush(): Promise<void> {
  await new Promise((resolve) => setTimeout(resolve, 0));
}

describe("active-learning review", () => {
  let root: HTMLElement;
  let handlers: ReviewHandlers;

  beforeEach(() => {
    resetCounter();
    root = document.createElement("div");
    handlers = {
      tileUrl: (task, cls, x, y) => `/api/predictions/j1/tiles/${task}/${cls}/16/${x}/${y}.png`,
      onAnnotate: vi.fn().mockResolvedValue({ status: "completed" }),
      onComplete: vi.fn().mockResolvedValue(mkExperiment({ experiment_id: "clone9" })),
    };
  });

  it("shows k tile cards in the server-given order", () => {
    const round = mkRound({
      round_id: "r1",
      k: 3,
      tiles: [
        [34002, 22001],
        [34000, 22000],
        [34001, 22000],
      ],
      uncertainties: [0.93, 0.71, 0.445],
    });
    renderReview(root, round, "seg", handlers);
    const cards = [...root.querySelectorAll(".tile-card")];
    expect(cards).toHaveLength(3);
    expect(cards.map((c) => c.getAttribute("data-tile"))).toEqual([
      "34002,22001",
      "34000,22000",
      "34001,22000",
    ]);
    expect(cards.map((c) => c.querySelector(".uncertainty")!.textContent)).toEqual([
      "0.93",
      "0.71",
      "0.445",
    ]);
    const img = cards[0].querySelector(".context-tile")!;
    expect(img.getAttribute("src")).toBe("/api/predictions/j1/tiles/seg/1/16/34002/22001.png");
  });

  it("rejects an empty submit inline without calling the server", () => {
    renderReview(root, mkRound({ round_id: "r1" }), "seg", handlers);
    (root.querySelector(".submit-annotations") as HTMLElement).click();
    const err = root.querySelector(".annotation-error")!;
    expect(err.textContent).toMatch(/at least one tile/);
    expect(handlers.onAnnotate).not.toHaveBeenCalled();
  });

  it("submits the pasted WKT as one batch", async () => {
    renderReview(root, mkRound({ round_id: "r1" }), "seg", handlers);
    const inputs = [...root.querySelectorAll<HTMLTextAreaElement>(".wkt-input")];
    inputs[0].value = "POLYGON ((8 47, 8.001 47, 8.001 47.001, 8 47))";
    inputs[2].value = "POINT (8.002 47.002)";
    (root.querySelector(".submit-annotations") as HTMLElement).click();
    await flush();
    expect(handlers.onAnnotate).toHaveBeenCalledWith(
      "POLYGON ((8 47, 8.001 47, 8.001 47.001, 8 47))\nPOINT (8.002 47.002)",
    );
    expect(root.querySelector(".task-status")!.textContent).toMatch(/recorded/);
    expect(root.querySelector(".annotation-error")!.textContent).toBe("");
  });

  it("shows the clone link after completing the round", async () => {
    renderReview(root, mkRound({ round_id: "r1" }), "seg", handlers);
    (root.querySelector(".complete-round") as HTMLElement).click();
    await flush();
    expect(handlers.onComplete).toHaveBeenCalledTimes(1);
    const link = root.querySelector(".clone-link")!;
    expect(link.textContent).toBe("clone9");
    expect(link.getAttribute("href")).toBe("#/experiments/clone9");
  });

  it("surfaces the server's state error on a closed round", async () => {
    handlers.onAnnotate = vi
      .fn()
      .mockRejectedValue(new ApiError(409, "labeling task 't1' is completed"));
    renderReview(root, mkRound({ round_id: "r1" }), "seg", handlers);
    const inputs = [...root.querySelectorAll<HTMLTextAreaElement>(".wkt-input")];
    inputs[0].value = "POINT (8 47)";
    (root.querySelector(".submit-annotations") as HTMLElement).click();
    await flush();
    expect(root.querySelector(".server-error")!.textContent).toMatch(
      /labeling task 't1' is completed/,
    );
  });

  it("locks an already-completed round and shows its clone", () => {
    const round = mkRound({ round_id: "r2", clone_experiment_id: "cloneA" });
    renderReview(root, round, "seg", handlers);
    expect((root.querySelector(".submit-annotations") as HTMLButtonElement).disabled).toBe(true);
    expect((root.querySelector(".complete-round") as HTMLButtonElement).disabled).toBe(true);
    expect(root.querySelector(".clone-link")!.textContent).toBe("cloneA");
  });
});
