import { ReviewApi } from "./api.js";
import { App } from "./app.js";

// ?api=http://host:port points the UI at a review service on another
// origin; with no parameter it expects to be served behind the same one
const params = new URLSearchParams(window.location.search);
const app = new App(new ReviewApi(params.get("api") ?? ""));

const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app mount point");
}
app.mount(root);
app.startPolling();
void app.show("funnel");
