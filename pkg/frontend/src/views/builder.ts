// Experiment builder: a form whose choices come from the server
// catalogs, so it can only describe experiments the backend will
// accept. Client-side checks cover what the server would reject
// anyway; server messages still land inline when they happen.

import { clear, el } from "../dom.js";
import type { ExperimentCreate } from "../api.js";
import type { ArchitectureInfo, LabelSetInfo, ProfileInfo } from "../types.js";

export interface BuilderSubmit {
  body: ExperimentCreate;
  runDataprep: boolean;
  automlRanges: Record<string, [number, number]> | null;
}

export interface BuilderHandlers {
  onSubmit: (submit: BuilderSubmit) => void;
  onCancel: () => void;
}

export function renderBuilder(
  container: HTMLElement,
  profiles: ProfileInfo[],
  architectures: ArchitectureInfo[],
  labelSets: LabelSetInfo[],
  handlers: BuilderHandlers,
): void {
  clear(container);
  const form = el("form", { class: "builder-form" });
  form.addEventListener("submit", (ev) => ev.preventDefault());

  // -- label set --------------------------------------------------------
  form.appendChild(el("label", { text: "Label set" }));
  const setSelect = el("select", { class: "label-set-select" });
  for (const ls of labelSets) {
    setSelect.appendChild(
      el("option", {
        value: ls.label_set_id,
        text: `${ls.label_set_id} (${ls.tasks.map((t) => t.task_name).join(", ")})`,
      }),
    );
  }
  form.appendChild(setSelect);

  // -- profiles ---------------------------------------------------------
  form.appendChild(el("label", { text: "Imagery profiles" }));
  const profileList = el("div", { class: "profile-list" });
  const checks: HTMLInputElement[] = [];
  for (const p of profiles) {
    const check = el("input", { type: "checkbox", class: "profile-check", value: p.profile_id });
    checks.push(check);
    profileList.appendChild(
      el("label", { class: "profile-row" }, check, ` ${p.name} (${p.channel_count} ch)`),
    );
  }
  form.appendChild(profileList);
  const channelSummary = el("div", { class: "channel-summary", text: "C=0" });
  form.appendChild(channelSummary);

  // -- architecture -----------------------------------------------------
  form.appendChild(el("label", { text: "Architecture" }));
  const archSelect = el("select", { class: "arch-select" });
  for (const a of architectures) {
    archSelect.appendChild(
      el("option", { value: a.architecture_id, text: `${a.architecture_id}: ${a.description}` }),
    );
  }
  form.appendChild(archSelect);

  // -- hyperparameters --------------------------------------------------
  const numberField = (cls: string, labelText: string, value: string): HTMLInputElement => {
    form.appendChild(el("label", { text: labelText }));
    const input = el("input", { type: "number", step: "any", class: cls, value });
    form.appendChild(input);
    return input;
  };
  const epochs = numberField("hp-epochs", "Epochs", "10");
  const lr = numberField("hp-lr", "Learning rate", "0.001");
  const batch = numberField("hp-batch", "Batch size", "2");

  // -- tuning range (fed to the hyperparameter search job) --------------
  form.appendChild(el("label", { text: "Learning-rate search range (optional)" }));
  const rangeRow = el("div", { class: "range-row" });
  const lrLo = el("input", { type: "number", step: "any", class: "lr-lo", placeholder: "low" });
  const lrHi = el("input", { type: "number", step: "any", class: "lr-hi", placeholder: "high" });
  rangeRow.append(lrLo, " to ", lrHi);
  form.appendChild(rangeRow);
  const rangeError = el("div", { class: "field-error lr-range-error" });
  form.appendChild(rangeError);

  const dataprepCheck = el("input", { type: "checkbox", class: "dataprep-check" });
  form.appendChild(el("label", { class: "dataprep-row" }, dataprepCheck, " start data prep now"));

  const formError = el("div", { class: "form-error" });
  form.appendChild(formError);

  const submitBtn = el("button", { class: "create-btn", type: "submit", text: "Create" });
  const cancelBtn = el("button", {
    class: "cancel-btn",
    type: "button",
    text: "Cancel",
    onclick: () => handlers.onCancel(),
  });
  form.appendChild(el("div", { class: "builder-actions" }, submitBtn, cancelBtn));

  const selectedProfiles = (): ProfileInfo[] =>
    checks.filter((c) => c.checked).map((c) => profiles.find((p) => p.profile_id === c.value)!);

  const rangeInvalid = (): boolean => {
    if (lrLo.value === "" || lrHi.value === "") return false;
    return Number(lrLo.value) > Number(lrHi.value);
  };

  const refresh = (): void => {
    const total = selectedProfiles().reduce((acc, p) => acc + p.channel_count, 0);
    channelSummary.textContent = `C=${total}`;
    if (rangeInvalid()) {
      rangeError.textContent = "low end of the range must not exceed the high end";
      submitBtn.disabled = true;
    } else {
      rangeError.textContent = "";
      submitBtn.disabled = false;
    }
  };
  form.addEventListener("input", refresh);
  form.addEventListener("change", refresh);
  refresh();

  submitBtn.addEventListener("click", (ev) => {
    ev.preventDefault();
    if (submitBtn.disabled) return;
    formError.textContent = "";
    const body: ExperimentCreate = {
      label_set_id: setSelect.value,
      profile_ids: selectedProfiles().map((p) => p.profile_id),
      architecture_id: archSelect.value,
      hyperparams: {
        epochs: Number(epochs.value),
        learning_rate: Number(lr.value),
        batch_size: Number(batch.value),
      },
    };
    const ranges: Record<string, [number, number]> | null =
      lrLo.value !== "" && lrHi.value !== ""
        ? { learning_rate: [Number(lrLo.value), Number(lrHi.value)] }
        : null;
    handlers.onSubmit({ body, runDataprep: dataprepCheck.checked, automlRanges: ranges });
  });

  container.appendChild(form);
}

/** Written by the app when the create call fails server-side. */
export function showBuilderError(container: HTMLElement, message: string): void {
  const slot = container.querySelector<HTMLElement>(".form-error");
  if (slot) slot.textContent = message;
}
