// Browser entry point. Kept separate from App so tests can construct
// the app against a mock fetch without side effects at import time.

import { ApiClient } from "./api.js";
import { startApp } from "./app.js";

const root = document.getElementById("app");
if (root) {
  // served by the backend itself, so same-origin relative URLs
  startApp(new ApiClient(""), root);
}
